#pragma once

#include <stdexcept>
#include <string>

namespace ppinet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define PPINET_DEFINE_ERROR(Name)                  \
    class Name : public Error {                    \
    public:                                        \
        using Error::Error;                        \
    }

// geometry
PPINET_DEFINE_ERROR(CollinearError);
PPINET_DEFINE_ERROR(EmptySetError);

// dataset
PPINET_DEFINE_ERROR(DegenerateExtentError);
PPINET_DEFINE_ERROR(IoError);

// handdraw
PPINET_DEFINE_ERROR(DomainError);
PPINET_DEFINE_ERROR(CholeskyFailure);

// numcore
PPINET_DEFINE_ERROR(NotScalarError);
PPINET_DEFINE_ERROR(GraphFreedError);
PPINET_DEFINE_ERROR(ShapeMismatchError);
PPINET_DEFINE_ERROR(StepOutOfRangeError);
PPINET_DEFINE_ERROR(NonFiniteError);

// model
PPINET_DEFINE_ERROR(BadImageShapeError);
PPINET_DEFINE_ERROR(ParamOutOfRangeError);
PPINET_DEFINE_ERROR(MaskShapeMismatchError);
PPINET_DEFINE_ERROR(ModeMismatchError);

// assignment / metrics
PPINET_DEFINE_ERROR(SizeError);
PPINET_DEFINE_ERROR(NonFiniteCostError);

// pipeline
PPINET_DEFINE_ERROR(NonFiniteLossError);
PPINET_DEFINE_ERROR(VersionMismatchError);
PPINET_DEFINE_ERROR(ConfigMismatchError);
PPINET_DEFINE_ERROR(CheckpointFormatError);

#undef PPINET_DEFINE_ERROR

/// Schema violation while reading a record file; carries the offending record index
/// (-1 when the document itself is malformed).
class SchemaError : public Error {
public:
    SchemaError(long index, const std::string& what)
        : Error("record " + std::to_string(index) + ": " + what), index_(index) {}
    long index() const noexcept { return index_; }

private:
    long index_;
};

}  // namespace ppinet
