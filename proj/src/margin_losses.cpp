#include <digeo/margin_losses.hpp>

#include <cmath>
#include <numeric>

namespace digeo {

void ClassPrior::validate() const
{
    if (foreground.empty()) throw domain_error("ClassPrior: no foreground classes");
    for (std::size_t c = 0; c < foreground.size(); ++c) {
        if (!(foreground[c] > 0) || !std::isfinite(foreground[c])) {
            throw domain_error("ClassPrior: foreground probability " + std::to_string(c) +
                               " must be > 0");
        }
    }
    if (!(background > 0) || !std::isfinite(background)) {
        throw domain_error("ClassPrior: background probability must be > 0");
    }
    const double total = std::accumulate(foreground.begin(), foreground.end(), background);
    if (std::abs(total - 1.0) > 1e-9) {
        throw domain_error("ClassPrior: probabilities sum to " + std::to_string(total) + ", not 1");
    }
}

MarginVector margins_from_prior(const ClassPrior& prior)
{
    prior.validate();
    MarginVector m;
    m.margins.resize(static_cast<index_type>(prior.num_slots()));
    for (std::size_t c = 0; c < prior.foreground.size(); ++c) {
        m.margins(static_cast<index_type>(c)) = -std::log(prior.foreground[c]);
    }
    m.margins(m.margins.size() - 1) = -std::log(prior.background);
    return m;
}

void to_json(nlohmann::json& j, const ClassPrior& prior)
{
    j = nlohmann::json{{"foreground", prior.foreground}, {"background", prior.background}};
}

void from_json(const nlohmann::json& j, ClassPrior& prior)
{
    for (const auto& item : j.items()) {
        if (item.key() != "foreground" && item.key() != "background") {
            throw format_error("ClassPrior: unknown key '" + item.key() + "'");
        }
    }
    j.at("foreground").get_to(prior.foreground);
    j.at("background").get_to(prior.background);
    prior.validate();
}

void to_json(nlohmann::json& j, const MarginVector& margins)
{
    std::vector<double> values(margins.margins.data(),
                               margins.margins.data() + margins.margins.size());
    j = nlohmann::json{{"margins", values}, {"learnable", margins.learnable}};
}

void from_json(const nlohmann::json& j, MarginVector& margins)
{
    for (const auto& item : j.items()) {
        if (item.key() != "margins" && item.key() != "learnable") {
            throw format_error("MarginVector: unknown key '" + item.key() + "'");
        }
    }
    const auto values = j.at("margins").get<std::vector<double>>();
    margins.margins = Eigen::Map<const Eigen::VectorXd>(values.data(),
                                                        static_cast<index_type>(values.size()));
    margins.learnable = j.at("learnable").get<bool>();
    if (!margins.margins.allFinite()) throw format_error("MarginVector: non-finite margin");
}

} // namespace digeo
