#pragma once

// Independent reference implementations used by the test suites and by
// `synlm selftest`. None of these share code with the routines they check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "synlm/model.hpp"
#include "synlm/rng.hpp"
#include "synlm/tensor.hpp"
#include "synlm/transitions.hpp"
#include "synlm/treebank.hpp"

namespace synlm::oracles {

/// Random n-ary tree over the given label/word alphabets.
inline Tree random_tree(Rng& rng, const std::vector<std::string>& labels, const std::vector<std::string>& words,
                        std::size_t max_depth = 5, std::size_t max_children = 4) {
    std::function<Tree(std::size_t)> grow = [&](std::size_t depth) {
        Tree t{labels[rng.below(labels.size())], {}};
        const std::size_t n = 1 + rng.below(max_children);
        for (std::size_t i = 0; i < n; ++i) {
            if (depth + 1 < max_depth && rng.uniform() < 0.35) {
                t.children.push_back(grow(depth + 1));
            } else {
                t.children.push_back(Tree::leaf(words[rng.below(words.size())]));
            }
        }
        return t;
    };
    return grow(0);
}

/// Random legal action prefix (BOS included) of up to `max_actions`
/// non-BOS actions, following the structural rules directly.
inline ActionSequence random_prefix(Rng& rng, std::size_t max_actions, const std::vector<std::string>& labels,
                                    const std::vector<std::string>& words) {
    ActionSequence out{Action::bos()};
    std::vector<std::size_t> children;  // per open constituent
    bool closed = false;
    const std::size_t len = rng.below(max_actions + 1);
    for (std::size_t i = 0; i < len && !closed; ++i) {
        std::vector<int> kinds;  // 0 NT, 1 GEN, 2 REDUCE
        kinds.push_back(0);
        if (!children.empty()) kinds.push_back(1);
        if (!children.empty() && children.back() > 0) {
            kinds.push_back(2);
            kinds.push_back(2);  // bias toward closing so prefixes stay shallow
        }
        switch (kinds[rng.below(kinds.size())]) {
            case 0:
                if (!children.empty()) ++children.back();
                children.push_back(0);
                out.push_back(Action::nt(labels[rng.below(labels.size())]));
                break;
            case 1:
                ++children.back();
                out.push_back(Action::gen(words[rng.below(words.size())]));
                break;
            default:
                children.pop_back();
                out.push_back(Action::reduce());
                closed = children.empty();
                break;
        }
    }
    return out;
}

/// Mask rows by backward bracket-balance scanning: for input position k the
/// deepest unclosed NT is the first NT at which the running balance of
/// REDUCEs (read right to left) is exhausted.
inline std::vector<HeadMaskRow> brute_force_head_masks(const ActionSequence& prefix) {
    std::vector<HeadMaskRow> rows;
    for (std::size_t k = 0; k < prefix.size(); ++k) {
        std::size_t open_at = 0;
        bool found = false;
        int pending = 0;
        for (std::size_t j = k; j >= 1 && !found; --j) {
            if (prefix[j].kind == ActionKind::Reduce) {
                ++pending;
            } else if (prefix[j].kind == ActionKind::Nt) {
                if (pending == 0) {
                    open_at = j;
                    found = true;
                } else {
                    --pending;
                }
            }
        }
        HeadMaskRow row{std::vector<bool>(k + 1, false), std::vector<bool>(k + 1, false)};
        if (found) {
            for (std::size_t j = 0; j <= k; ++j) {
                row.stack_visible[j] = j >= open_at;
                row.outside_visible[j] = j < open_at;
            }
        } else {
            row.stack_visible[k] = true;
            for (std::size_t j = 0; j < k; ++j) row.outside_visible[j] = true;
        }
        row.stack_visible[k] = true;
        if (std::none_of(row.outside_visible.begin(), row.outside_visible.end(), [](bool b) { return b; })) {
            row.outside_visible[0] = true;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t checked = 0;
};

/// Relative error with a floor on the denominator, so entries whose true
/// gradient is ~0 are judged by absolute error.
inline double relative_error(double a, double n, double floor) {
    return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline constexpr double kGradCheckFloor = 1e-6;

/// Fourth-order central differences over every parameter element:
/// (-f(x+2h) + 8 f(x+h) - 8 f(x-h) + f(x-2h)) / 12h. `loss` must rebuild the
/// graph from the current parameter values and return the loss; `grads` must
/// hold the analytic gradient of the same function.
template <typename T>
GradCheckResult finite_difference_check(std::vector<Parameter<T>>& params, const std::vector<Tensor<T>>& grads,
                                        const std::function<double()>& loss, double h = 1e-3,
                                        double floor = kGradCheckFloor) {
    GradCheckResult r;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            const T saved = p.value[k];
            auto at = [&](double offset) {
                p.value[k] = static_cast<T>(static_cast<double>(saved) + offset);
                return loss();
            };
            const double numeric = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12.0 * h);
            p.value[k] = saved;
            const double analytic = static_cast<double>(grads[i][k]);
            const double err = relative_error(analytic, numeric, floor);
            ++r.checked;
            if (err > r.max_rel_error) {
                r.max_rel_error = err;
                r.worst_param = p.name;
                r.worst_index = k;
                r.analytic = analytic;
                r.numeric = numeric;
            }
        }
    }
    return r;
}

}  // namespace synlm::oracles
