#ifndef HLFIT_ERRORS_HPP
#define HLFIT_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace hlfit {

// Adaptive integrator drove the step below the minimum (blow-up or
// unresolvable stiffness). Callers treat the parameter point as infeasible.
class StepSizeUnderflow : public std::runtime_error {
public:
    explicit StepSizeUnderflow(const std::string& what) : std::runtime_error(what) {}
};

// The untreated steady state of the within-host model does not exist
// (production too low to sustain infection at the given rates).
class NoInfectedEquilibrium : public std::runtime_error {
public:
    explicit NoInfectedEquilibrium(const std::string& what) : std::runtime_error(what) {}
};

// Observation transform applied outside its domain (e.g. non-positive
// viral load under a log transform).
class DomainError : public std::runtime_error {
public:
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

// A finite-difference stencil could not be completed: some stencil point
// stayed infeasible after the bounded step-halving retries.
class FiniteDifferenceFailure : public std::runtime_error {
public:
    explicit FiniteDifferenceFailure(const std::string& what) : std::runtime_error(what) {}
};

// Inner random-effect curvature block was numerically singular when
// profiling a subject out of the sandwich variance.
class SingularInnerBlock : public std::runtime_error {
public:
    explicit SingularInnerBlock(const std::string& what) : std::runtime_error(what) {}
};

// Too few bootstrap replicates converged to support a bias estimate.
class TooFewConverged : public std::runtime_error {
public:
    explicit TooFewConverged(const std::string& what) : std::runtime_error(what) {}
};

// Malformed configuration or dataset input; message names the offending field.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace hlfit

#endif
