#include "fiberscope/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fiberscope/error.hpp"

namespace fiberscope {

SampleGroup::SampleGroup(std::string l, std::vector<double> v)
    : label(std::move(l)), values(std::move(v)) {}

double SampleGroup::mean() const {
    if (values.empty()) return 0.0;
    double s = 0.0;
    for (double v : values) s += v;
    return s / double(values.size());
}

double SampleGroup::variance() const {
    if (values.size() < 2) return 0.0;
    const double m = mean();
    double s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return s / double(values.size() - 1);
}

double SampleGroup::sd() const { return std::sqrt(variance()); }

namespace {

// Continued fraction for I_x(a, b) (modified Lentz), valid and fast for
// x < (a + 1) / (a + b + 2).
double beta_fraction(double a, double b, double x) {
    constexpr double kTiny = 1e-300;
    constexpr double kEps = 1e-16;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= 10000; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    throw StatisticsError("incomplete beta: continued fraction did not converge");
}

// x and y = 1 - x passed separately so callers can supply y without
// cancellation.
double ibeta(double a, double b, double x, double y) {
    if (x <= 0.0) return 0.0;
    if (y <= 0.0) return 1.0;
    const double lfront =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log(y);
    const double front = std::exp(lfront);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
    return 1.0 - front * beta_fraction(b, a, y) / b;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw InvalidArgument("incomplete_beta: a and b must be > 0");
    if (!(x >= 0.0 && x <= 1.0)) throw InvalidArgument("incomplete_beta: x outside [0, 1]");
    return ibeta(a, b, x, 1.0 - x);
}

double student_t_two_sided(double t, double df) {
    if (!(df > 0.0)) throw InvalidArgument("student_t_two_sided: df must be > 0");
    if (std::isnan(t)) throw InvalidArgument("student_t_two_sided: t is NaN");
    if (std::isinf(t)) return 0.0;
    const double t2 = t * t;
    // P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2).
    const double p = ibeta(df / 2.0, 0.5, df / (df + t2), t2 / (df + t2));
    return std::clamp(p, 0.0, 1.0);
}

TTestResult t_test(const SampleGroup& a, const SampleGroup& b, TTestVariant variant) {
    if (a.n() < 2 || b.n() < 2) throw StatisticsError("t_test: each group needs at least 2 values");
    const double n1 = double(a.n()), n2 = double(b.n());
    const double v1 = a.variance(), v2 = b.variance();
    const double diff = a.mean() - b.mean();

    TTestResult r;
    r.variant = variant;
    if (variant == TTestVariant::Pooled) {
        r.degrees_freedom = n1 + n2 - 2.0;
        const double sp2 = ((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / r.degrees_freedom;
        r.sed = std::sqrt(sp2 * (1.0 / n1 + 1.0 / n2));
    } else {
        const double s1 = v1 / n1, s2 = v2 / n2;
        r.sed = std::sqrt(s1 + s2);
        // Welch-Satterthwaite; both constant leaves df undefined, use the
        // pooled count.
        r.degrees_freedom = s1 + s2 > 0.0
                                ? (s1 + s2) * (s1 + s2) /
                                      (s1 * s1 / (n1 - 1.0) + s2 * s2 / (n2 - 1.0))
                                : n1 + n2 - 2.0;
    }

    if (r.sed == 0.0) {
        if (diff == 0.0) throw StatisticsError("t_test: both groups constant with equal means");
        r.t = diff > 0 ? std::numeric_limits<double>::infinity()
                       : -std::numeric_limits<double>::infinity();
        r.p_value = 0.0;
        return r;
    }
    r.t = diff / r.sed;
    r.p_value = student_t_two_sided(r.t, r.degrees_freedom);
    return r;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw StatisticsError("quantile: no values");
    if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("quantile: q outside [0, 1]");
    std::sort(values.begin(), values.end());
    const double pos = q * double(values.size() - 1);
    const auto lo = std::size_t(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double f = pos - double(lo);
    return values[lo] + f * (values[hi] - values[lo]);
}

GroupSummary summarize(const SampleGroup& g) {
    if (g.values.empty()) throw StatisticsError("summarize: group '" + g.label + "' is empty");
    GroupSummary s;
    s.label = g.label;
    s.n = g.n();
    s.mean = g.mean();
    s.sd = g.sd();
    s.min = *std::min_element(g.values.begin(), g.values.end());
    s.max = *std::max_element(g.values.begin(), g.values.end());
    s.q1 = quantile(g.values, 0.25);
    s.median = quantile(g.values, 0.5);
    s.q3 = quantile(g.values, 0.75);
    return s;
}

GroupReport group_report(const std::vector<SampleGroup>& groups, const std::string& metric,
                         TTestVariant variant) {
    if (groups.size() < 2) throw StatisticsError("group_report: need at least 2 groups");
    GroupReport r;
    r.metric = metric;
    r.variant = variant;
    for (const auto& g : groups) r.groups.push_back(summarize(g));
    for (std::size_t i = 0; i < groups.size(); ++i)
        for (std::size_t j = i + 1; j < groups.size(); ++j) {
            PairwiseComparison c;
            c.first = i;
            c.second = j;
            try {
                c.test = t_test(groups[i], groups[j], variant);
            } catch (const StatisticsError&) {
                c.test.reset();
            }
            const double m1 = r.groups[i].mean, m2 = r.groups[j].mean;
            c.mean_difference_percent = m1 != 0.0 ? 100.0 * (m2 - m1) / m1 : 0.0;
            r.comparisons.push_back(c);
        }
    return r;
}

const char* to_string(TTestVariant v) { return v == TTestVariant::Pooled ? "pooled" : "welch"; }

}  // namespace fiberscope
