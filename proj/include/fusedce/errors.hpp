#pragma once

#include <stdexcept>
#include <string>

namespace fusedce {

// Error taxonomy shared by every module. Each kind has its own exception
// type so call sites can catch precisely; all derive from Error.
enum class ErrorCode {
    DimensionMismatch,
    TargetOutOfRange,
    UnderflowRelease,
    DuplicateTarget,
    MissingStats,
    InconsistentUpstream,
    UnsupportedReduction,
    InvalidLayout,
    EmptyGrid,
    EmptyInput,
};

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
    ErrorCode code() const noexcept { return code_; }

  private:
    ErrorCode code_;
};

#define FUSEDCE_DEFINE_ERROR(NAME)                                                    \
    class NAME : public Error {                                                       \
      public:                                                                         \
        explicit NAME(const std::string& what) : Error(ErrorCode::NAME, what) {}      \
    }

FUSEDCE_DEFINE_ERROR(DimensionMismatch);
FUSEDCE_DEFINE_ERROR(TargetOutOfRange);
FUSEDCE_DEFINE_ERROR(UnderflowRelease);
FUSEDCE_DEFINE_ERROR(DuplicateTarget);
FUSEDCE_DEFINE_ERROR(MissingStats);
FUSEDCE_DEFINE_ERROR(InconsistentUpstream);
FUSEDCE_DEFINE_ERROR(UnsupportedReduction);
FUSEDCE_DEFINE_ERROR(InvalidLayout);
FUSEDCE_DEFINE_ERROR(EmptyGrid);
FUSEDCE_DEFINE_ERROR(EmptyInput);

#undef FUSEDCE_DEFINE_ERROR

}  // namespace fusedce
