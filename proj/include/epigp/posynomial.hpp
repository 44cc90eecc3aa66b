#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace epigp {

/// Symbolic identifier of a positive variable.
///
/// Names are interned in a process-wide registry, so a VarId is a cheap
/// integer handle. Equality and the default ordering use the intern index;
/// canonical printing orders by name (see by_name()).
class VarId {
public:
    explicit VarId(std::string_view name);

    const std::string& name() const;
    std::uint32_t index() const noexcept { return index_; }

    friend bool operator==(VarId, VarId) = default;
    friend std::strong_ordering operator<=>(VarId, VarId) = default;

    static bool by_name(VarId a, VarId b) { return a.name() < b.name(); }

private:
    std::uint32_t index_;
};

using Assignment = std::map<VarId, double>;

/// c * prod_j x_j^{a_j} with c > 0. Exponents are kept sorted by VarId and
/// exact zeros are dropped.
class Monomial {
public:
    using Exponents = std::vector<std::pair<VarId, double>>;

    explicit Monomial(double coeff);
    Monomial(double coeff, Exponents exponents);

    static Monomial variable(VarId v, double exponent = 1.0) { return Monomial(1.0, {{v, exponent}}); }

    double coeff() const noexcept { return coeff_; }
    const Exponents& exponents() const noexcept { return exponents_; }
    double exponent(VarId v) const;
    bool is_constant() const noexcept { return exponents_.empty(); }

    Monomial operator*(const Monomial& other) const;
    Monomial scaled(double c) const;

    // Monomial whose value is 1/this.
    Monomial inverse() const;

private:
    friend class Posynomial;
    Monomial(double coeff, Exponents exponents, bool /*canonical*/) noexcept
        : coeff_(coeff), exponents_(std::move(exponents))
    {
    }

    double coeff_;
    Exponents exponents_;
};

/// Non-empty sum of monomials with like terms merged.
///
/// Terms are stored in canonical order (lexicographic on the exponent list)
/// so that two posynomials built from the same terms compare equal.
class Posynomial {
public:
    explicit Posynomial(std::vector<Monomial> terms);
    Posynomial(Monomial m); // NOLINT: a monomial is a one-term posynomial

    static Posynomial constant(double c) { return Posynomial(Monomial(c)); }

    const std::vector<Monomial>& terms() const noexcept { return terms_; }
    std::size_t size() const noexcept { return terms_.size(); }
    bool is_constant() const noexcept { return terms_.size() == 1 && terms_.front().is_constant(); }
    bool is_monomial() const noexcept { return terms_.size() == 1; }

    // Variables referenced by any term, sorted by VarId.
    std::vector<VarId> variables() const;

    friend bool operator==(const Posynomial& a, const Posynomial& b);

private:
    struct Canonical {};
    Posynomial(std::vector<Monomial> terms, Canonical) noexcept : terms_(std::move(terms)) {}
    static std::vector<Monomial> canonicalize(std::vector<Monomial> terms);

    friend Posynomial add(const Posynomial&, const Posynomial&);
    friend Posynomial mul(const Posynomial&, const Posynomial&);
    friend Posynomial scale(const Posynomial&, double);
    friend Posynomial substitute(const Posynomial&, const Assignment&);

    std::vector<Monomial> terms_;
};

double eval(const Monomial& m, const Assignment& assignment);
double eval(const Posynomial& p, const Assignment& assignment);

// log eval(p, exp(y)) computed with log-sum-exp; y is unrestricted.
double log_eval(const Posynomial& p, const Assignment& y);

Posynomial add(const Posynomial& p, const Posynomial& q);
Posynomial mul(const Posynomial& p, const Posynomial& q);
Posynomial scale(const Posynomial& p, double c);
Posynomial substitute(const Posynomial& p, const Assignment& partial);

inline Posynomial operator+(const Posynomial& p, const Posynomial& q) { return add(p, q); }
inline Posynomial operator*(const Posynomial& p, const Posynomial& q) { return mul(p, q); }

struct LogValueGrad {
    double value;
    std::map<VarId, double> grad;
};

/// F(y) = log p(exp(y)) and its exact gradient, via log-sum-exp. Every
/// variable of p must be bound in y and appears in grad.
LogValueGrad log_value_grad(const Posynomial& p, const Assignment& y);

/// `c * v1^a1 * v2^a2 + ...`, terms sorted by exponent map (variable names
/// ascending), reals printed with 17 significant digits.
std::string to_string(const Monomial& m);
std::string to_string(const Posynomial& p);

/// Dense log-space form of a posynomial over a fixed variable ordering,
/// F(y) = logsumexp(log c + E y). Used by the GP solver.
class LogPosynomial {
public:
    LogPosynomial(const Posynomial& p, std::span<const VarId> order);

    Eigen::Index num_vars() const { return exps_.cols(); }
    Eigen::Index num_terms() const { return exps_.rows(); }
    bool is_affine() const { return exps_.rows() == 1; }

    double value(const Eigen::VectorXd& y) const;
    double value(const Eigen::VectorXd& y, Eigen::VectorXd& grad) const;
    double value(const Eigen::VectorXd& y, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const;

private:
    Eigen::VectorXd log_coeff_;
    Eigen::MatrixXd exps_; // terms x vars
};

/// Matrix with posynomial entries; nullopt slots are structural zeros
/// (additive identity, multiplicative annihilator).
class PosyMatrix {
public:
    using Entry = std::optional<Posynomial>;

    PosyMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), entries_(rows * cols) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    const Entry& operator()(std::size_t r, std::size_t c) const { return entries_[r * cols_ + c]; }
    Entry& operator()(std::size_t r, std::size_t c) { return entries_[r * cols_ + c]; }

    // Numeric value with absent slots as 0.
    Eigen::MatrixXd eval(const Assignment& assignment) const;

    // Total number of monomial terms over all present entries.
    std::size_t term_count() const;

private:
    std::size_t rows_;
    std::size_t cols_;
    std::vector<Entry> entries_;
};

PosyMatrix mat_mul(const PosyMatrix& a, const PosyMatrix& b);

// Sum of two optional posynomials, nullopt meaning zero.
std::optional<Posynomial> add(const std::optional<Posynomial>& p, const std::optional<Posynomial>& q);

} // namespace epigp
