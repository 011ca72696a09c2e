#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace openmig {

enum class ErrorKind {
    // ingest
    FileNotFound,
    MissingColumn,
    MalformedRow,
    DuplicateKey,
    NegativeStock,
    BadISO3,
    NonpositiveDistance,
    NonBinaryDummy,
    NonpositivePopulation,
    InvalidValue,
    EmptyPanel,
    // estimator
    NonConvergence,
    EmptyAfterSeparation,
    SingularBread,
    UnknownFELevel,
    UnknownColumn,
    InvalidSpec,
    // openness
    PanelMismatch,
    MissingPopulation,
    CoverageMismatch,
    // analysis
    InsufficientData,
    RankDeficient,
    // simlab
    TooLargeForDense,
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::FileNotFound: return "FileNotFound";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::MalformedRow: return "MalformedRow";
    case ErrorKind::DuplicateKey: return "DuplicateKey";
    case ErrorKind::NegativeStock: return "NegativeStock";
    case ErrorKind::BadISO3: return "BadISO3";
    case ErrorKind::NonpositiveDistance: return "NonpositiveDistance";
    case ErrorKind::NonBinaryDummy: return "NonBinaryDummy";
    case ErrorKind::NonpositivePopulation: return "NonpositivePopulation";
    case ErrorKind::InvalidValue: return "InvalidValue";
    case ErrorKind::EmptyPanel: return "EmptyPanel";
    case ErrorKind::NonConvergence: return "NonConvergence";
    case ErrorKind::EmptyAfterSeparation: return "EmptyAfterSeparation";
    case ErrorKind::SingularBread: return "SingularBread";
    case ErrorKind::UnknownFELevel: return "UnknownFELevel";
    case ErrorKind::UnknownColumn: return "UnknownColumn";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::PanelMismatch: return "PanelMismatch";
    case ErrorKind::MissingPopulation: return "MissingPopulation";
    case ErrorKind::CoverageMismatch: return "CoverageMismatch";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::TooLargeForDense: return "TooLargeForDense";
    }
    return "Unknown";
}

/// Library-wide exception. `row()` is the zero-based data row index (header
/// excluded) for errors raised while validating an input table.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message, std::optional<std::size_t> row = std::nullopt)
        : std::runtime_error(format(kind, message, row)), kind_(kind), row_(row) {}

    ErrorKind kind() const noexcept { return kind_; }
    std::optional<std::size_t> row() const noexcept { return row_; }

private:
    static std::string format(ErrorKind kind, const std::string& message, std::optional<std::size_t> row) {
        std::string out{to_string(kind)};
        if (row) out += " (row " + std::to_string(*row) + ")";
        out += ": ";
        out += message;
        return out;
    }

    ErrorKind kind_;
    std::optional<std::size_t> row_;
};

} // namespace openmig
