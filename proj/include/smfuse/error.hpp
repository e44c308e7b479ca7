#ifndef SMFUSE_ERROR_HPP
#define SMFUSE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace smfuse {

enum class Errc {
    // raster
    MissingFile,
    BadMagic,
    TruncatedPayload,
    NonFiniteHeaderField,
    IoFailure,
    DisjointExtents,
    NonDivisibleFactor,
    PointOutsideExtent,
    InvalidGeometry,
    // features
    DegenerateRange,
    UnknownIndexName,
    MissingBand,
    GeometryMismatch,
    DuplicateName,
    InvalidConfig,
    // select / regress
    EmptyData,
    DimensionMismatch,
    SchemaMismatch,
    TargetCountOutOfRange,
    ConstantFeature,
    NonPositiveHyperparameter,
    NonFiniteInput,
    GridEmpty,
    // segment / fuse / eval
    EmptyStack,
    AllNodata,
    NonPositiveArea,
    MissingFeatureLayer,
    LengthMismatch,
    NoValidPoints,
    EmptyInput,
    // cli
    ConfigParse,
    UnknownKey,
};

inline const char* errc_name(Errc code) {
    switch (code) {
    case Errc::MissingFile: return "MissingFile";
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedPayload: return "TruncatedPayload";
    case Errc::NonFiniteHeaderField: return "NonFiniteHeaderField";
    case Errc::IoFailure: return "IoFailure";
    case Errc::DisjointExtents: return "DisjointExtents";
    case Errc::NonDivisibleFactor: return "NonDivisibleFactor";
    case Errc::PointOutsideExtent: return "PointOutsideExtent";
    case Errc::InvalidGeometry: return "InvalidGeometry";
    case Errc::DegenerateRange: return "DegenerateRange";
    case Errc::UnknownIndexName: return "UnknownIndexName";
    case Errc::MissingBand: return "MissingBand";
    case Errc::GeometryMismatch: return "GeometryMismatch";
    case Errc::DuplicateName: return "DuplicateName";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::EmptyData: return "EmptyData";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::SchemaMismatch: return "SchemaMismatch";
    case Errc::TargetCountOutOfRange: return "TargetCountOutOfRange";
    case Errc::ConstantFeature: return "ConstantFeature";
    case Errc::NonPositiveHyperparameter: return "NonPositiveHyperparameter";
    case Errc::NonFiniteInput: return "NonFiniteInput";
    case Errc::GridEmpty: return "GridEmpty";
    case Errc::EmptyStack: return "EmptyStack";
    case Errc::AllNodata: return "AllNodata";
    case Errc::NonPositiveArea: return "NonPositiveArea";
    case Errc::MissingFeatureLayer: return "MissingFeatureLayer";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::NoValidPoints: return "NoValidPoints";
    case Errc::EmptyInput: return "EmptyInput";
    case Errc::ConfigParse: return "ConfigParse";
    case Errc::UnknownKey: return "UnknownKey";
    }
    return "Unknown";
}

/// Exception carrying a machine-checkable error code.
class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

// Error raised while reading a point/config file that knows its line.
class LineError : public Error {
public:
    LineError(Errc code, std::size_t line, const std::string& what)
        : Error(code, "line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

} // namespace smfuse

#endif
