#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace oedkit {

/// Operand shapes do not agree.
class DimensionMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Argument outside the domain of a kernel or operator.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Cholesky factorization met a non-positive pivot.
class NotPositiveDefinite : public std::runtime_error {
public:
    NotPositiveDefinite(std::size_t pivot, const std::string& what)
        : std::runtime_error(what), pivot_(pivot) {}
    explicit NotPositiveDefinite(std::size_t pivot)
        : NotPositiveDefinite(pivot, "matrix is not positive definite (pivot " +
                                         std::to_string(pivot) + ")") {}

    std::size_t pivot() const noexcept { return pivot_; }

private:
    std::size_t pivot_;
};

/// A block of a block-diagonal matrix could not be factorized.
class SingularBlock : public std::runtime_error {
public:
    SingularBlock(std::size_t block, std::size_t pivot)
        : std::runtime_error("block " + std::to_string(block) +
                             " is not positive definite (pivot " + std::to_string(pivot) + ")"),
          block_(block) {}

    std::size_t block() const noexcept { return block_; }

private:
    std::size_t block_;
};

/// The weighted Hessian Gamma_prior^{-1} + F* W F lost positive definiteness.
class IndefiniteHessian : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace oedkit
