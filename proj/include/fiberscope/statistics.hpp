#pragma once

#include <optional>
#include <string>
#include <vector>

namespace fiberscope {

/// Measurements of one group (one genotype, one slide). mean and sd are
/// derived from values; sd uses the n-1 denominator.
struct SampleGroup {
    std::string label;
    std::vector<double> values;

    SampleGroup() = default;
    SampleGroup(std::string label, std::vector<double> values);

    std::size_t n() const { return values.size(); }
    double mean() const;
    double sd() const;
    double variance() const;
};

enum class TTestVariant { Pooled, Welch };

struct TTestResult {
    double t = 0.0;
    double degrees_freedom = 0.0;
    /// Two-sided.
    double p_value = 1.0;
    /// Standard error of the difference of means.
    double sed = 0.0;
    TTestVariant variant = TTestVariant::Pooled;
};

/// Regularized incomplete beta I_x(a, b), a, b > 0, x in [0, 1].
double incomplete_beta(double a, double b, double x);

/// Two-sided tail P(|T| >= |t|) of Student's t with df > 0 degrees of freedom.
double student_t_two_sided(double t, double df);

/// Independent two-sample t-test. Throws StatisticsError when either group
/// has fewer than 2 values, or when both groups are constant with equal
/// means (t = 0/0). Constant groups with different means give t = ±inf,
/// p = 0.
TTestResult t_test(const SampleGroup& a, const SampleGroup& b,
                   TTestVariant variant = TTestVariant::Pooled);

/// Linear-interpolation quantile (the "inclusive" convention: position
/// q(n-1) in the sorted values). Throws StatisticsError on empty input.
double quantile(std::vector<double> values, double q);

struct GroupSummary {
    std::string label;
    std::size_t n = 0;
    double mean = 0.0;
    double sd = 0.0;
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;
};

GroupSummary summarize(const SampleGroup& g);

struct PairwiseComparison {
    std::size_t first = 0;
    std::size_t second = 0;
    /// Empty when t is undefined (both groups constant with equal means).
    std::optional<TTestResult> test;
    /// 100 (mean(second) - mean(first)) / mean(first).
    double mean_difference_percent = 0.0;
};

struct GroupReport {
    std::string metric;
    std::string quantile_method = "linear (inclusive)";
    TTestVariant variant = TTestVariant::Pooled;
    std::vector<GroupSummary> groups;
    /// Every pair (i, j), i < j, in order.
    std::vector<PairwiseComparison> comparisons;
};

/// Throws StatisticsError for fewer than 2 groups.
GroupReport group_report(const std::vector<SampleGroup>& groups, const std::string& metric,
                         TTestVariant variant = TTestVariant::Pooled);

const char* to_string(TTestVariant v);

}  // namespace fiberscope
