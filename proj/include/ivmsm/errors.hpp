#pragma once

#include <stdexcept>
#include <string>

namespace ivmsm {

// Every library failure is one of these named conditions so callers (and the
// CLI) can map them to exit diagnostics without string matching.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define IVMSM_ERROR_TYPE(Name)                                        \
    struct Name : Error {                                             \
        explicit Name(const std::string& msg) : Error(msg) {}         \
    }

IVMSM_ERROR_TYPE(SingularMatrix);
IVMSM_ERROR_TYPE(ComplexSpectrum);
IVMSM_ERROR_TYPE(NoConvergence);
IVMSM_ERROR_TYPE(SingularInformation);
IVMSM_ERROR_TYPE(InvalidParams);
IVMSM_ERROR_TYPE(RejectionFailure);
IVMSM_ERROR_TYPE(SeparationDetected);
IVMSM_ERROR_TYPE(PositivityViolation);
IVMSM_ERROR_TYPE(ZeroDelta);
IVMSM_ERROR_TYPE(InvalidFz);
IVMSM_ERROR_TYPE(ZeroGamma);
IVMSM_ERROR_TYPE(SingularDesign);
IVMSM_ERROR_TYPE(ZeroDenominator);
IVMSM_ERROR_TYPE(TooManyFailures);
IVMSM_ERROR_TYPE(UnnormalizedTable);
IVMSM_ERROR_TYPE(IoError);

#undef IVMSM_ERROR_TYPE

}  // namespace ivmsm
