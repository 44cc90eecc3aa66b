#include "epigp/posynomial.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <functional>
#include <mutex>
#include <shared_mutex>

#include "epigp/errors.hpp"

namespace epigp {

namespace {

struct VarRegistry {
    std::shared_mutex mutex;
    std::deque<std::string> names; // deque: references stay valid on growth
    std::map<std::string, std::uint32_t, std::less<>> ids;
};

VarRegistry& registry()
{
    static VarRegistry r;
    return r;
}

// Above this magnitude of a_j * log(x_j) evaluation switches to log space.
constexpr double kOverflowGuard = 500.0;

std::string format_real(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double lookup(const Assignment& assignment, VarId v)
{
    auto it = assignment.find(v);
    if (it == assignment.end()) {
        throw UnboundVariableError("unbound variable '" + v.name() + "'");
    }
    return it->second;
}

double lookup_positive(const Assignment& assignment, VarId v)
{
    double x = lookup(assignment, v);
    if (!(x > 0.0) || !std::isfinite(x)) {
        throw DomainError("variable '" + v.name() + "' must be positive and finite, got " + format_real(x));
    }
    return x;
}

double log_sum_exp(const std::vector<double>& z)
{
    double hi = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) {
        s += std::exp(v - hi);
    }
    return hi + std::log(s);
}

} // namespace

// --- VarId ---------------------------------------------------------------

VarId::VarId(std::string_view name)
{
    if (name.empty()) {
        throw ValidationError("variable name must be non-empty");
    }
    auto& reg = registry();
    {
        std::shared_lock lock(reg.mutex);
        if (auto it = reg.ids.find(name); it != reg.ids.end()) {
            index_ = it->second;
            return;
        }
    }
    std::unique_lock lock(reg.mutex);
    if (auto it = reg.ids.find(name); it != reg.ids.end()) {
        index_ = it->second;
        return;
    }
    index_ = static_cast<std::uint32_t>(reg.names.size());
    reg.names.emplace_back(name);
    reg.ids.emplace(std::string(name), index_);
}

const std::string& VarId::name() const
{
    auto& reg = registry();
    std::shared_lock lock(reg.mutex);
    return reg.names[index_];
}

// --- Monomial ------------------------------------------------------------

Monomial::Monomial(double coeff) : Monomial(coeff, Exponents{}) {}

Monomial::Monomial(double coeff, Exponents exponents) : coeff_(coeff)
{
    if (!(coeff > 0.0) || !std::isfinite(coeff)) {
        throw DomainError("monomial coefficient must be positive and finite, got " + format_real(coeff));
    }
    std::sort(exponents.begin(), exponents.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [v, a] : exponents) {
        if (!std::isfinite(a)) {
            throw DomainError("non-finite exponent for variable '" + v.name() + "'");
        }
        if (!exponents_.empty() && exponents_.back().first == v) {
            exponents_.back().second += a;
        }
        else {
            exponents_.emplace_back(v, a);
        }
    }
    std::erase_if(exponents_, [](const auto& e) { return e.second == 0.0; });
}

double Monomial::exponent(VarId v) const
{
    auto it = std::lower_bound(exponents_.begin(), exponents_.end(), v,
                               [](const auto& e, VarId key) { return e.first < key; });
    return (it != exponents_.end() && it->first == v) ? it->second : 0.0;
}

Monomial Monomial::operator*(const Monomial& other) const
{
    Exponents out;
    out.reserve(exponents_.size() + other.exponents_.size());
    auto a = exponents_.begin();
    auto b = other.exponents_.begin();
    while (a != exponents_.end() || b != other.exponents_.end()) {
        if (b == other.exponents_.end() || (a != exponents_.end() && a->first < b->first)) {
            out.push_back(*a++);
        }
        else if (a == exponents_.end() || b->first < a->first) {
            out.push_back(*b++);
        }
        else {
            double s = a->second + b->second;
            if (s != 0.0) {
                out.emplace_back(a->first, s);
            }
            ++a;
            ++b;
        }
    }
    double c = coeff_ * other.coeff_;
    if (!(c > 0.0) || !std::isfinite(c)) {
        throw DomainError("monomial product coefficient left the positive reals");
    }
    return Monomial(c, std::move(out), true);
}

Monomial Monomial::scaled(double c) const
{
    if (!(c > 0.0) || !std::isfinite(c)) {
        throw DomainError("scale factor must be positive, got " + format_real(c));
    }
    return Monomial(coeff_ * c, exponents_, true);
}

Monomial Monomial::inverse() const
{
    Exponents inv = exponents_;
    for (auto& e : inv) {
        e.second = -e.second;
    }
    return Monomial(1.0 / coeff_, std::move(inv), true);
}

double eval(const Monomial& m, const Assignment& assignment)
{
    double log_part = 0.0;
    bool overflow = false;
    for (const auto& [v, a] : m.exponents()) {
        double t = a * std::log(lookup_positive(assignment, v));
        overflow = overflow || std::abs(t) > kOverflowGuard;
        log_part += t;
    }
    if (overflow) {
        return std::exp(std::log(m.coeff()) + log_part);
    }
    double r = m.coeff();
    for (const auto& [v, a] : m.exponents()) {
        r *= std::pow(assignment.at(v), a);
    }
    return r;
}

// --- Posynomial ----------------------------------------------------------

std::vector<Monomial> Posynomial::canonicalize(std::vector<Monomial> terms)
{
    std::sort(terms.begin(), terms.end(),
              [](const Monomial& a, const Monomial& b) { return a.exponents() < b.exponents(); });
    std::vector<Monomial> merged;
    merged.reserve(terms.size());
    for (auto& t : terms) {
        if (!merged.empty() && merged.back().exponents() == t.exponents()) {
            merged.back().coeff_ += t.coeff_;
        }
        else {
            merged.push_back(std::move(t));
        }
    }
    return merged;
}

Posynomial::Posynomial(std::vector<Monomial> terms)
{
    if (terms.empty()) {
        throw ValidationError("a posynomial needs at least one term");
    }
    terms_ = canonicalize(std::move(terms));
}

Posynomial::Posynomial(Monomial m) : terms_{std::move(m)} {}

std::vector<VarId> Posynomial::variables() const
{
    std::vector<VarId> vars;
    for (const auto& t : terms_) {
        for (const auto& e : t.exponents()) {
            vars.push_back(e.first);
        }
    }
    std::sort(vars.begin(), vars.end());
    vars.erase(std::unique(vars.begin(), vars.end()), vars.end());
    return vars;
}

bool operator==(const Posynomial& a, const Posynomial& b)
{
    return std::equal(a.terms_.begin(), a.terms_.end(), b.terms_.begin(), b.terms_.end(),
                      [](const Monomial& x, const Monomial& y) {
                          return x.coeff() == y.coeff() && x.exponents() == y.exponents();
                      });
}

double eval(const Posynomial& p, const Assignment& assignment)
{
    // Decide the evaluation space once for the whole sum.
    std::vector<double> log_terms;
    log_terms.reserve(p.size());
    bool overflow = false;
    for (const auto& t : p.terms()) {
        double s = std::log(t.coeff());
        for (const auto& [v, a] : t.exponents()) {
            double u = a * std::log(lookup_positive(assignment, v));
            overflow = overflow || std::abs(u) > kOverflowGuard;
            s += u;
        }
        log_terms.push_back(s);
    }
    if (overflow) {
        return std::exp(log_sum_exp(log_terms));
    }
    double sum = 0.0;
    for (const auto& t : p.terms()) {
        double r = t.coeff();
        for (const auto& [v, a] : t.exponents()) {
            r *= std::pow(assignment.at(v), a);
        }
        sum += r;
    }
    return sum;
}

double log_eval(const Posynomial& p, const Assignment& y)
{
    std::vector<double> z;
    z.reserve(p.size());
    for (const auto& t : p.terms()) {
        double s = std::log(t.coeff());
        for (const auto& [v, a] : t.exponents()) {
            s += a * lookup(y, v);
        }
        z.push_back(s);
    }
    return log_sum_exp(z);
}

Posynomial add(const Posynomial& p, const Posynomial& q)
{
    std::vector<Monomial> terms;
    terms.reserve(p.size() + q.size());
    terms.insert(terms.end(), p.terms_.begin(), p.terms_.end());
    terms.insert(terms.end(), q.terms_.begin(), q.terms_.end());
    return Posynomial(Posynomial::canonicalize(std::move(terms)), Posynomial::Canonical{});
}

Posynomial mul(const Posynomial& p, const Posynomial& q)
{
    std::vector<Monomial> terms;
    terms.reserve(p.size() * q.size());
    for (const auto& a : p.terms_) {
        for (const auto& b : q.terms_) {
            terms.push_back(a * b);
        }
    }
    return Posynomial(Posynomial::canonicalize(std::move(terms)), Posynomial::Canonical{});
}

Posynomial scale(const Posynomial& p, double c)
{
    if (!(c > 0.0) || !std::isfinite(c)) {
        throw DomainError("scale factor must be positive, got " + format_real(c));
    }
    std::vector<Monomial> terms;
    terms.reserve(p.size());
    for (const auto& t : p.terms_) {
        terms.push_back(t.scaled(c));
    }
    return Posynomial(std::move(terms), Posynomial::Canonical{});
}

Posynomial substitute(const Posynomial& p, const Assignment& partial)
{
    for (const auto& [v, x] : partial) {
        if (!(x > 0.0) || !std::isfinite(x)) {
            throw DomainError("substituted value for '" + v.name() + "' must be positive, got " + format_real(x));
        }
    }
    std::vector<Monomial> terms;
    terms.reserve(p.size());
    for (const auto& t : p.terms_) {
        double c = t.coeff();
        Monomial::Exponents rest;
        for (const auto& [v, a] : t.exponents()) {
            if (auto it = partial.find(v); it != partial.end()) {
                c *= std::pow(it->second, a);
            }
            else {
                rest.emplace_back(v, a);
            }
        }
        terms.emplace_back(c, std::move(rest));
    }
    return Posynomial(Posynomial::canonicalize(std::move(terms)), Posynomial::Canonical{});
}

LogValueGrad log_value_grad(const Posynomial& p, const Assignment& y)
{
    std::vector<double> z;
    z.reserve(p.size());
    for (const auto& t : p.terms()) {
        double s = std::log(t.coeff());
        for (const auto& [v, a] : t.exponents()) {
            s += a * lookup(y, v);
        }
        z.push_back(s);
    }
    double lse = log_sum_exp(z);
    LogValueGrad out{lse, {}};
    for (VarId v : p.variables()) {
        out.grad[v] = 0.0;
    }
    for (std::size_t i = 0; i < z.size(); ++i) {
        double w = std::exp(z[i] - lse);
        for (const auto& [v, a] : p.terms()[i].exponents()) {
            out.grad[v] += w * a;
        }
    }
    return out;
}

std::string to_string(const Monomial& m)
{
    auto exps = m.exponents();
    std::sort(exps.begin(), exps.end(), [](const auto& a, const auto& b) { return VarId::by_name(a.first, b.first); });
    std::string s = format_real(m.coeff());
    for (const auto& [v, a] : exps) {
        s += " * " + v.name() + "^" + format_real(a);
    }
    return s;
}

std::string to_string(const Posynomial& p)
{
    using Key = std::vector<std::pair<std::string, double>>;
    std::vector<std::pair<Key, const Monomial*>> keyed;
    for (const auto& t : p.terms()) {
        Key k;
        for (const auto& [v, a] : t.exponents()) {
            k.emplace_back(v.name(), a);
        }
        std::sort(k.begin(), k.end());
        keyed.emplace_back(std::move(k), &t);
    }
    std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::string s;
    for (const auto& [k, t] : keyed) {
        if (!s.empty()) {
            s += " + ";
        }
        s += to_string(*t);
    }
    return s;
}

// --- LogPosynomial -------------------------------------------------------

LogPosynomial::LogPosynomial(const Posynomial& p, std::span<const VarId> order)
    : log_coeff_(static_cast<Eigen::Index>(p.size())),
      exps_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p.size()), static_cast<Eigen::Index>(order.size())))
{
    std::map<VarId, Eigen::Index> column;
    for (std::size_t j = 0; j < order.size(); ++j) {
        column.emplace(order[j], static_cast<Eigen::Index>(j));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& t = p.terms()[i];
        log_coeff_[static_cast<Eigen::Index>(i)] = std::log(t.coeff());
        for (const auto& [v, a] : t.exponents()) {
            auto it = column.find(v);
            if (it == column.end()) {
                throw UnboundVariableError("variable '" + v.name() + "' is not part of the program");
            }
            exps_(static_cast<Eigen::Index>(i), it->second) = a;
        }
    }
}

double LogPosynomial::value(const Eigen::VectorXd& y) const
{
    Eigen::VectorXd z = log_coeff_ + exps_ * y;
    double hi = z.maxCoeff();
    return hi + std::log((z.array() - hi).exp().sum());
}

double LogPosynomial::value(const Eigen::VectorXd& y, Eigen::VectorXd& grad) const
{
    Eigen::VectorXd z = log_coeff_ + exps_ * y;
    double hi = z.maxCoeff();
    Eigen::VectorXd w = (z.array() - hi).exp();
    double s = w.sum();
    w /= s;
    grad = exps_.transpose() * w;
    return hi + std::log(s);
}

double LogPosynomial::value(const Eigen::VectorXd& y, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const
{
    Eigen::VectorXd z = log_coeff_ + exps_ * y;
    double hi = z.maxCoeff();
    Eigen::VectorXd w = (z.array() - hi).exp();
    double s = w.sum();
    w /= s;
    grad = exps_.transpose() * w;
    hess = exps_.transpose() * w.asDiagonal() * exps_ - grad * grad.transpose();
    return hi + std::log(s);
}

// --- PosyMatrix ----------------------------------------------------------

Eigen::MatrixXd PosyMatrix::eval(const Assignment& assignment) const
{
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows_), static_cast<Eigen::Index>(cols_));
    for (std::size_t r = 0; r < rows_; ++r) {
        for (std::size_t c = 0; c < cols_; ++c) {
            if (const auto& e = (*this)(r, c)) {
                out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = epigp::eval(*e, assignment);
            }
        }
    }
    return out;
}

std::size_t PosyMatrix::term_count() const
{
    std::size_t n = 0;
    for (const auto& e : entries_) {
        n += e ? e->size() : 0;
    }
    return n;
}

PosyMatrix mat_mul(const PosyMatrix& a, const PosyMatrix& b)
{
    if (a.cols() != b.rows()) {
        throw ShapeError("mat_mul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    PosyMatrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            std::optional<Posynomial> acc;
            for (std::size_t t = 0; t < a.cols(); ++t) {
                const auto& x = a(i, t);
                const auto& y = b(t, j);
                if (x && y) {
                    acc = add(acc, mul(*x, *y));
                }
            }
            out(i, j) = std::move(acc);
        }
    }
    return out;
}

std::optional<Posynomial> add(const std::optional<Posynomial>& p, const std::optional<Posynomial>& q)
{
    if (!p) {
        return q;
    }
    if (!q) {
        return p;
    }
    return add(*p, *q);
}

} // namespace epigp
