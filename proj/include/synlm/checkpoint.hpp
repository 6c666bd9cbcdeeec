#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "synlm/error.hpp"
#include "synlm/model.hpp"
#include "synlm/vocab.hpp"

namespace synlm {

// Layout: magic line, u64 little-endian manifest length, JSON manifest,
// then the raw little-endian tensor payloads in manifest order.
inline constexpr std::string_view kCheckpointMagic = "SYNLM-CHECKPOINT 1\n";

template <typename T>
struct Checkpoint {
    Transformer<T> model;
    Vocabulary vocab;
    nlohmann::json metadata = nlohmann::json::object();
};

namespace detail {

template <typename U>
void append_le(std::string& out, U value) {
    unsigned char bytes[sizeof(U)];
    std::memcpy(bytes, &value, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
    out.append(reinterpret_cast<const char*>(bytes), sizeof(U));
}

template <typename U>
U read_le(const char* p) {
    unsigned char bytes[sizeof(U)];
    std::memcpy(bytes, p, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
    U value;
    std::memcpy(&value, bytes, sizeof(U));
    return value;
}

template <typename T>
constexpr const char* dtype_tag() {
    return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& ck) {
    using nlohmann::json;
    const std::string joint = ck.vocab.joint.serialize();
    const std::string grams = ck.vocab.ngrams.serialize();
    json manifest;
    manifest["config"] = to_json(ck.model.config());
    manifest["dtype"] = detail::dtype_tag<T>();
    manifest["endianness"] = "little";
    manifest["vocab"] = {{"joint", joint},
                         {"joint_digest", hex64(fnv1a64(joint))},
                         {"ngrams", grams},
                         {"ngrams_digest", hex64(fnv1a64(grams))}};
    manifest["metadata"] = ck.metadata;
    json tensors = json::array();
    std::size_t offset = 0;
    for (const auto& p : ck.model.params()) {
        tensors.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"offset", offset}});
        offset += p.value.size() * sizeof(T);
    }
    manifest["tensors"] = tensors;
    manifest["payload_bytes"] = offset;
    const std::string mtext = manifest.dump();

    std::string out(kCheckpointMagic);
    detail::append_le<std::uint64_t>(out, mtext.size());
    out += mtext;
    out.reserve(out.size() + offset);
    for (const auto& p : ck.model.params()) {
        for (T v : p.value.values()) detail::append_le<T>(out, v);
    }
    return out;
}

/// Loads a checkpoint into scalar type T; payloads stored at the other
/// precision are converted.
template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& bytes) {
    using nlohmann::json;
    auto fail = [](const std::string& m) -> void { throw Error(Errc::BadCheckpoint, m); };
    if (bytes.compare(0, kCheckpointMagic.size(), kCheckpointMagic) != 0) fail("bad magic");
    std::size_t pos = kCheckpointMagic.size();
    if (bytes.size() < pos + 8) fail("truncated header");
    const auto mlen = detail::read_le<std::uint64_t>(bytes.data() + pos);
    pos += 8;
    if (bytes.size() < pos + mlen) fail("truncated manifest");
    json manifest;
    try {
        manifest = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                               bytes.begin() + static_cast<std::ptrdiff_t>(pos + mlen));
    } catch (const json::exception& e) {
        fail(std::string("manifest: ") + e.what());
    }
    pos += mlen;
    if (!manifest.is_object() || !manifest.contains("vocab") || !manifest["vocab"].is_object() ||
        !manifest.contains("tensors") || !manifest["tensors"].is_array() || !manifest.contains("config")) {
        fail("manifest lacks config, vocab or tensors");
    }
    if (manifest.value("endianness", "") != "little") fail("unsupported endianness");
    const std::string dtype = manifest.value("dtype", "");
    if (dtype != "f32" && dtype != "f64") fail("unsupported dtype " + dtype);
    const std::size_t width = dtype == "f32" ? 4 : 8;

    Checkpoint<T> ck;
    const std::string joint = manifest["vocab"].value("joint", "");
    const std::string grams = manifest["vocab"].value("ngrams", "");
    if (hex64(fnv1a64(joint)) != manifest["vocab"].value("joint_digest", "") ||
        hex64(fnv1a64(grams)) != manifest["vocab"].value("ngrams_digest", "")) {
        throw Error(Errc::VocabMismatch, "checkpoint vocabulary digest mismatch");
    }
    std::istringstream jin(joint), gin(grams);
    ck.vocab.joint = JointActionVocab::deserialize(jin);
    ck.vocab.ngrams = NGramVocab::deserialize(gin);
    ck.metadata = manifest.value("metadata", json::object());
    ck.model = Transformer<T>(model_config_from_json(manifest["config"]));

    const json& tensors = manifest["tensors"];
    if (tensors.size() != ck.model.params().size()) fail("tensor count mismatch");
    const std::size_t payload = manifest.value("payload_bytes", std::size_t{0});
    if (bytes.size() != pos + payload) fail("payload size mismatch");
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        auto& p = ck.model.params()[i];
        const json& t = tensors[i];
        if (t.value("name", "") != p.name || t.value("rows", std::size_t{0}) != p.value.rows() ||
            t.value("cols", std::size_t{0}) != p.value.cols()) {
            fail("tensor " + std::to_string(i) + " does not match the model layout");
        }
        const std::size_t off = t.value("offset", std::size_t{0});
        if (off + p.value.size() * width > payload) fail("tensor " + p.name + " overruns the payload");
        const char* src = bytes.data() + pos + off;
        for (std::size_t k = 0; k < p.value.size(); ++k) {
            p.value[k] = width == 4 ? static_cast<T>(detail::read_le<float>(src + 4 * k))
                                    : static_cast<T>(detail::read_le<double>(src + 8 * k));
        }
    }
    return ck;
}

template <typename T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
    detail::write_text_file(path, serialize_checkpoint(ck));
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::Io, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    return deserialize_checkpoint<T>(read_file_bytes(path));
}

}  // namespace synlm
