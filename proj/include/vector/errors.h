#pragma once

#include <stdexcept>
#include <string>

namespace vec {

// Base of every error the library raises. Two families matter to callers:
// DataError (bad input, unknown ids, invalid edits) and NumericalError
// (geometry or optimization failures). The CLI and HTTP layers map the
// families onto exit codes and status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

#define VEC_DEFINE_ERROR(Name, Base) \
  class Name : public Base {         \
   public:                           \
    using Base::Base;                \
  }

// geometry
VEC_DEFINE_ERROR(CheiralityViolation, NumericalError);
VEC_DEFINE_ERROR(DegenerateGeometry, NumericalError);
VEC_DEFINE_ERROR(MissingFinalState, DataError);

// dataset
VEC_DEFINE_ERROR(IoError, DataError);
VEC_DEFINE_ERROR(ValueError, DataError);
VEC_DEFINE_ERROR(DuplicateId, DataError);
VEC_DEFINE_ERROR(UnknownCameraRef, DataError);
VEC_DEFINE_ERROR(TooFewObservations, DataError);
VEC_DEFINE_ERROR(InfeasibleConfig, DataError);

class SchemaError : public DataError {
 public:
  SchemaError(const std::string& message, long line)
      : DataError("line " + std::to_string(line) + ": " + message),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

// bundle_adjust
VEC_DEFINE_ERROR(NumericalFailure, NumericalError);
VEC_DEFINE_ERROR(EmptyProblem, DataError);
VEC_DEFINE_ERROR(SingularSystem, NumericalError);
VEC_DEFINE_ERROR(DegenerateConfiguration, NumericalError);
VEC_DEFINE_ERROR(Cancelled, Error);

// analysis
VEC_DEFINE_ERROR(EmptyInput, DataError);

// session
VEC_DEFINE_ERROR(UnknownId, DataError);
VEC_DEFINE_ERROR(AlreadyDeleted, DataError);
VEC_DEFINE_ERROR(TooFewCamerasRemaining, DataError);
VEC_DEFINE_ERROR(UnknownRun, DataError);
VEC_DEFINE_ERROR(CorruptSessionFile, DataError);

#undef VEC_DEFINE_ERROR

}  // namespace vec
