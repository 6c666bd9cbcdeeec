#pragma once

#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>

namespace synlm {

enum class Errc {
    UnbalancedBrackets,
    EmptyConstituent,
    BadLabel,
    IllegalAction,
    IncompleteSequence,
    TrailingActions,
    EmptyCorpus,
    VocabMismatch,
    ShapeMismatch,
    AllMaskedColumn,
    BadTarget,
    TooLong,
    MaskMismatch,
    VariantMismatch,
    BeamExhausted,
    BadSuiteFile,
    MissingGoldParse,
    ImproperGrammar,
    TooLarge,
    BadCheckpoint,
    BadConfig,
    Io,
    NumericFailure,
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::UnbalancedBrackets: return "UnbalancedBrackets";
        case Errc::EmptyConstituent: return "EmptyConstituent";
        case Errc::BadLabel: return "BadLabel";
        case Errc::IllegalAction: return "IllegalAction";
        case Errc::IncompleteSequence: return "IncompleteSequence";
        case Errc::TrailingActions: return "TrailingActions";
        case Errc::EmptyCorpus: return "EmptyCorpus";
        case Errc::VocabMismatch: return "VocabMismatch";
        case Errc::ShapeMismatch: return "ShapeMismatch";
        case Errc::AllMaskedColumn: return "AllMaskedColumn";
        case Errc::BadTarget: return "BadTarget";
        case Errc::TooLong: return "TooLong";
        case Errc::MaskMismatch: return "MaskMismatch";
        case Errc::VariantMismatch: return "VariantMismatch";
        case Errc::BeamExhausted: return "BeamExhausted";
        case Errc::BadSuiteFile: return "BadSuiteFile";
        case Errc::MissingGoldParse: return "MissingGoldParse";
        case Errc::ImproperGrammar: return "ImproperGrammar";
        case Errc::TooLarge: return "TooLarge";
        case Errc::BadCheckpoint: return "BadCheckpoint";
        case Errc::BadConfig: return "BadConfig";
        case Errc::Io: return "Io";
        case Errc::NumericFailure: return "NumericFailure";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
   public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const noexcept { return code_; }

   private:
    Errc code_;
};

// Minimal leveled logging to stderr.
enum class LogLevel { Debug = 0, Info = 1, Warn = 2, Error = 3, Off = 4 };

inline LogLevel& log_level() {
    static LogLevel level = LogLevel::Warn;
    return level;
}

template <typename... Args>
void log(LogLevel level, Args&&... args) {
    if (level < log_level()) return;
    static const char* const names[] = {"debug", "info", "warn", "error"};
    std::cerr << "[" << names[static_cast<int>(level)] << "] ";
    (std::cerr << ... << std::forward<Args>(args));
    std::cerr << '\n';
}

}  // namespace synlm
