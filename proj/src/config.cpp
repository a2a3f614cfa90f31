#include <digeo/config.hpp>

#include <fstream>
#include <sstream>

namespace digeo {

namespace {

using nlohmann::json;

json schedule_json(const TrainSchedule& s)
{
    return json{{"epochs", s.epochs},           {"learning_rate", s.learning_rate},
                {"momentum", s.momentum},       {"weight_decay", s.weight_decay},
                {"batch_size", s.batch_size},   {"decay_at", s.decay_at},
                {"decay_factor", s.decay_factor}};
}

TrainSchedule schedule_from(const json& j)
{
    TrainSchedule s;
    s.epochs = j.at("epochs").get<int>();
    s.learning_rate = j.at("learning_rate").get<double>();
    s.momentum = j.at("momentum").get<double>();
    s.weight_decay = j.at("weight_decay").get<double>();
    s.batch_size = j.at("batch_size").get<int>();
    s.decay_at = j.at("decay_at").get<double>();
    s.decay_factor = j.at("decay_factor").get<double>();
    return s;
}

bool same_kind(const json& a, const json& b)
{
    if (a.is_number() && b.is_number()) {
        // Integer slots reject fractional values.
        return !(a.is_number_integer() && b.is_number_float());
    }
    return a.type() == b.type();
}

void merge_checked(json& base, const json& patch, const std::string& path)
{
    if (!patch.is_object()) throw config_error(path.empty() ? "config root must be an object" : path + ": expected an object");
    for (const auto& item : patch.items()) {
        const std::string key = path.empty() ? item.key() : path + "." + item.key();
        if (!base.contains(item.key())) throw config_error("unknown config key '" + key + "'");
        json& slot = base[item.key()];
        if (slot.is_object()) {
            merge_checked(slot, item.value(), key);
        } else {
            if (!same_kind(slot, item.value())) {
                throw config_error("config key '" + key + "' expects " + std::string(slot.type_name()) +
                                   ", got " + item.value().type_name());
            }
            slot = item.value();
        }
    }
}

} // namespace

nlohmann::json to_json(const BenchConfig& c)
{
    const TaskSpec& t = c.task;
    return json{
        {"task",
         {{"num_base", t.num_base},
          {"num_novel", t.num_novel},
          {"shots", t.shots},
          {"samples_per_base", t.samples_per_base},
          {"background_fraction", t.background_fraction},
          {"input_dim", t.input_dim},
          {"cluster_spread", t.cluster_spread},
          {"mean_radius", t.mean_radius},
          {"background_spread", t.background_spread},
          {"test_per_class", t.test_per_class}}},
        {"head",
         {{"projected_dim", c.head.projected_dim},
          {"num_background_centers", c.head.num_background_centers},
          {"background_prob", c.head.background_prob}}},
        {"fix", schedule_json(c.fix_schedule)},
        {"distill", schedule_json(c.distill_schedule)},
        {"rfs_threshold", c.rfs_threshold},
        {"online_etf_strength", c.online_etf_strength},
    };
}

BenchConfig bench_config_from_json(const nlohmann::json& doc)
{
    json merged = to_json(BenchConfig{});
    merge_checked(merged, doc, "");

    BenchConfig c;
    const json& t = merged.at("task");
    c.task.num_base = t.at("num_base").get<int>();
    c.task.num_novel = t.at("num_novel").get<int>();
    c.task.shots = t.at("shots").get<int>();
    c.task.samples_per_base = t.at("samples_per_base").get<int>();
    c.task.background_fraction = t.at("background_fraction").get<double>();
    c.task.input_dim = t.at("input_dim").get<int>();
    c.task.cluster_spread = t.at("cluster_spread").get<double>();
    c.task.mean_radius = t.at("mean_radius").get<double>();
    c.task.background_spread = t.at("background_spread").get<double>();
    c.task.test_per_class = t.at("test_per_class").get<int>();
    const json& h = merged.at("head");
    c.head.projected_dim = h.at("projected_dim").get<int>();
    c.head.num_background_centers = h.at("num_background_centers").get<int>();
    c.head.background_prob = h.at("background_prob").get<double>();
    c.fix_schedule = schedule_from(merged.at("fix"));
    c.distill_schedule = schedule_from(merged.at("distill"));
    c.rfs_threshold = merged.at("rfs_threshold").get<double>();
    c.online_etf_strength = merged.at("online_etf_strength").get<double>();

    try {
        c.task.validate();
        c.fix_schedule.validate();
        c.distill_schedule.validate();
    } catch (const std::exception& e) {
        throw config_error(e.what());
    }
    if (c.head.projected_dim < c.task.num_foreground() + c.head.num_background_centers - 1) {
        throw config_error("head.projected_dim too small for a simplex ETF over all classes");
    }
    if (c.head.num_background_centers < 1) throw config_error("head.num_background_centers must be >= 1");
    if (!(c.head.background_prob > 0 && c.head.background_prob < 1)) {
        throw config_error("head.background_prob must lie in (0, 1)");
    }
    if (!(c.rfs_threshold > 0 && c.rfs_threshold <= 1)) throw config_error("rfs_threshold must lie in (0, 1]");
    if (!(c.online_etf_strength >= 0)) throw config_error("online_etf_strength must be >= 0");
    return c;
}

BenchConfig parse_bench_config(const std::string& text, const std::string& source)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        // Convert the byte offset into line:column.
        std::size_t line = 1, column = 1;
        const std::size_t limit = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, text.size());
        for (std::size_t i = 0; i < limit; ++i) {
            if (text[i] == '\n') {
                ++line;
                column = 1;
            } else {
                ++column;
            }
        }
        throw config_error(source + ":" + std::to_string(line) + ":" + std::to_string(column) +
                           ": parse error: " + e.what());
    }
    try {
        return bench_config_from_json(doc);
    } catch (const config_error& e) {
        throw config_error(source + ": " + e.what());
    }
}

BenchConfig load_bench_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_bench_config(buf.str(), path);
}

BenchConfig apply_overrides(const BenchConfig& config, const std::vector<std::string>& overrides)
{
    json doc = to_json(config);
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0) throw config_error("override '" + item + "' is not key=value");
        const std::string key = item.substr(0, eq);
        const std::string raw = item.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::parse_error&) {
            value = raw;
        }
        // Build a nested patch from the dotted path.
        json patch = value;
        std::vector<std::string> parts;
        std::stringstream ss(key);
        std::string part;
        while (std::getline(ss, part, '.')) {
            if (part.empty()) throw config_error("override key '" + key + "' has an empty segment");
            parts.push_back(part);
        }
        for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
        merge_checked(doc, patch, "");
    }
    return bench_config_from_json(doc);
}

} // namespace digeo
