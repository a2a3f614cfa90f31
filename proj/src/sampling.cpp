#include <digeo/sampling.hpp>

#include <algorithm>
#include <cmath>
#include <ostream>

#include <digeo/frame_io.hpp>
#include <digeo/rng.hpp>

namespace digeo {

namespace {

void check_threshold(double threshold)
{
    if (!(threshold > 0 && threshold <= 1)) {
        throw domain_error("RFS threshold must lie in (0, 1]");
    }
}

} // namespace

double FrequencyTable::image_frequency(std::size_t c) const
{
    return static_cast<double>(image_counts.at(c)) / static_cast<double>(num_samples);
}

FrequencyTable count_classes(const SampleClasses& samples, std::size_t num_classes)
{
    if (samples.empty()) throw domain_error("count_classes: empty dataset");
    FrequencyTable table;
    table.instance_counts.assign(num_classes, 0);
    table.image_counts.assign(num_classes, 0);
    table.num_samples = samples.size();
    std::vector<char> seen(num_classes, 0);
    for (const auto& classes : samples) {
        std::fill(seen.begin(), seen.end(), 0);
        for (const int c : classes) {
            if (c < 0 || static_cast<std::size_t>(c) >= num_classes) {
                throw domain_error("class id " + std::to_string(c) + " out of range");
            }
            const auto k = static_cast<std::size_t>(c);
            ++table.instance_counts[k];
            if (!seen[k]) {
                seen[k] = 1;
                ++table.image_counts[k];
            }
        }
    }
    return table;
}

double class_repeat_factor(double frequency, double threshold)
{
    check_threshold(threshold);
    if (!(frequency > 0)) throw domain_error("class_repeat_factor: frequency must be > 0");
    return std::max(1.0, std::sqrt(threshold / frequency));
}

std::vector<double> sample_repeat_factors(const SampleClasses& samples, std::size_t num_classes,
                                          double threshold)
{
    check_threshold(threshold);
    const auto table = count_classes(samples, num_classes);
    std::vector<double> class_factor(num_classes, 1.0);
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (table.image_counts[c] > 0) {
            class_factor[c] = class_repeat_factor(table.image_frequency(c), threshold);
        }
    }
    std::vector<double> factors(samples.size(), 1.0);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        for (const int c : samples[i]) {
            factors[i] = std::max(factors[i], class_factor[static_cast<std::size_t>(c)]);
        }
    }
    return factors;
}

RepeatPlan build_repeat_plan(const SampleClasses& samples, std::size_t num_classes,
                             double threshold, std::uint64_t seed)
{
    if (samples.empty()) throw domain_error("build_repeat_plan: empty dataset");
    RepeatPlan plan;
    plan.repeat_factors = sample_repeat_factors(samples, num_classes, threshold);
    plan.copies.resize(samples.size());
    Rng rng(seed);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double r = plan.repeat_factors[i];
        const double whole = std::floor(r);
        // One draw per sample keeps each sample's rounding independent of the others.
        const double u = rng.uniform();
        plan.copies[i] = static_cast<std::size_t>(whole) + (u < r - whole ? 1 : 0);
        plan.indices.insert(plan.indices.end(), plan.copies[i], i);
    }
    return plan;
}

ClassPrior estimate_priors(const SampleClasses& samples, std::size_t num_classes,
                           double background_prob)
{
    if (!(background_prob > 0 && background_prob < 1)) {
        throw domain_error("estimate_priors: background_prob must lie in (0, 1)");
    }
    const auto table = count_classes(samples, num_classes);
    std::size_t total = 0;
    for (std::size_t c = 0; c < num_classes; ++c) {
        if (table.instance_counts[c] == 0) {
            throw domain_error("estimate_priors: class " + std::to_string(c) +
                               " has no instances (margin would be infinite)");
        }
        total += table.instance_counts[c];
    }
    ClassPrior prior;
    prior.background = background_prob;
    prior.foreground.resize(num_classes);
    const double mass = 1.0 - background_prob;
    for (std::size_t c = 0; c < num_classes; ++c) {
        prior.foreground[c] =
            mass * static_cast<double>(table.instance_counts[c]) / static_cast<double>(total);
    }
    return prior;
}

void write_repeat_plan_csv(std::ostream& out, const RepeatPlan& plan)
{
    out << "sample_index,repeat_factor,materialized_count\n";
    for (std::size_t i = 0; i < plan.repeat_factors.size(); ++i) {
        out << i << ',' << format_double(plan.repeat_factors[i]) << ',' << plan.copies[i] << '\n';
    }
}

} // namespace digeo
