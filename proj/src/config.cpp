#include "neuroloc/config.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace neuroloc {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TOML subset

namespace {

class TomlParser {
public:
    explicit TomlParser(std::string_view text) : s_(text) {}

    json parse() {
        json root = json::object();
        json* current = &root;
        while (true) {
            skip_blank_lines();
            if (eof()) break;
            if (peek() == '[') {
                current = table_header(root);
            } else {
                key_value(*current);
            }
            end_of_line();
        }
        return root;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw std::invalid_argument("TOML line " + std::to_string(line_) + ": " + what);
    }

    bool eof() const { return pos_ >= s_.size(); }
    char peek(std::size_t ahead = 0) const { return pos_ + ahead < s_.size() ? s_[pos_ + ahead] : '\0'; }
    char get() {
        const char c = s_[pos_++];
        if (c == '\n') ++line_;
        return c;
    }

    void skip_spaces() {
        while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
    }
    void skip_comment() {
        if (peek() == '#')
            while (!eof() && peek() != '\n') ++pos_;
    }
    void skip_blank_lines() {
        while (!eof()) {
            skip_spaces();
            skip_comment();
            if (peek() == '\n' || peek() == '\r') {
                get();
            } else {
                break;
            }
        }
    }
    // Whitespace, comments and newlines, as allowed inside arrays.
    void skip_all() {
        while (!eof()) {
            skip_spaces();
            skip_comment();
            if (peek() == '\n' || peek() == '\r') {
                get();
                continue;
            }
            break;
        }
    }
    void end_of_line() {
        skip_spaces();
        skip_comment();
        if (eof()) return;
        if (peek() == '\r') get();
        if (eof()) return;
        if (peek() != '\n') fail("unexpected trailing characters");
        get();
    }
    void expect(char c) {
        if (peek() != c) fail(std::string("expected '") + c + "'");
        get();
    }

    static bool bare_key_char(char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
    }

    std::string key_part() {
        skip_spaces();
        if (peek() == '"') return basic_string();
        if (peek() == '\'') return literal_string();
        std::string out;
        while (!eof() && bare_key_char(peek())) out.push_back(get());
        if (out.empty()) fail("expected a key");
        return out;
    }

    std::vector<std::string> key_path() {
        std::vector<std::string> path{key_part()};
        skip_spaces();
        while (peek() == '.') {
            get();
            path.push_back(key_part());
            skip_spaces();
        }
        return path;
    }

    // Descends into `key`, creating a table; arrays of tables resolve to their last element.
    json* descend(json* node, const std::string& key) {
        json& child = (*node)[key];
        if (child.is_null()) child = json::object();
        if (child.is_array()) {
            if (child.empty() || !child.back().is_object()) fail("key '" + key + "' is not a table");
            return &child.back();
        }
        if (!child.is_object()) fail("key '" + key + "' is not a table");
        return &child;
    }

    json* table_header(json& root) {
        get();
        const bool array = peek() == '[';
        if (array) get();
        const auto path = key_path();
        expect(']');
        if (array) expect(']');

        json* node = &root;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) node = descend(node, path[i]);
        json& last = (*node)[path.back()];
        if (array) {
            if (last.is_null()) last = json::array();
            if (!last.is_array()) fail("'" + path.back() + "' is already defined as a non-array");
            last.push_back(json::object());
            return &last.back();
        }
        if (last.is_null()) last = json::object();
        if (!last.is_object()) fail("'" + path.back() + "' is already defined as a non-table");
        return &last;
    }

    void key_value(json& table) {
        const auto path = key_path();
        skip_spaces();
        expect('=');
        skip_spaces();
        json* node = &table;
        for (std::size_t i = 0; i + 1 < path.size(); ++i) node = descend(node, path[i]);
        if (node->contains(path.back())) fail("duplicate key '" + path.back() + "'");
        (*node)[path.back()] = value();
    }

    json value() {
        const char c = peek();
        if (c == '"') return basic_string();
        if (c == '\'') return literal_string();
        if (c == '[') return array();
        if (c == '{') return inline_table();
        if (s_.substr(pos_, 4) == "true") {
            pos_ += 4;
            return true;
        }
        if (s_.substr(pos_, 5) == "false") {
            pos_ += 5;
            return false;
        }
        return number();
    }

    std::string basic_string() {
        expect('"');
        if (peek() == '"' && peek(1) == '"') fail("multi-line strings are not supported");
        std::string out;
        while (true) {
            if (eof() || peek() == '\n') fail("unterminated string");
            char c = get();
            if (c == '"') break;
            if (c != '\\') {
                out.push_back(c);
                continue;
            }
            const char e = get();
            switch (e) {
                case '"': out.push_back('"'); break;
                case '\\': out.push_back('\\'); break;
                case 'n': out.push_back('\n'); break;
                case 't': out.push_back('\t'); break;
                case 'r': out.push_back('\r'); break;
                default: fail(std::string("unsupported escape \\") + e);
            }
        }
        return out;
    }

    std::string literal_string() {
        expect('\'');
        std::string out;
        while (true) {
            if (eof() || peek() == '\n') fail("unterminated string");
            const char c = get();
            if (c == '\'') break;
            out.push_back(c);
        }
        return out;
    }

    json array() {
        expect('[');
        json out = json::array();
        while (true) {
            skip_all();
            if (peek() == ']') {
                get();
                return out;
            }
            out.push_back(value());
            skip_all();
            if (peek() == ',') {
                get();
                continue;
            }
            skip_all();
            expect(']');
            return out;
        }
    }

    json inline_table() {
        expect('{');
        json out = json::object();
        skip_spaces();
        if (peek() == '}') {
            get();
            return out;
        }
        while (true) {
            key_value(out);
            skip_spaces();
            if (peek() == ',') {
                get();
                continue;
            }
            expect('}');
            return out;
        }
    }

    json number() {
        std::string tok;
        while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' || peek() == '-' ||
                          peek() == '.' || peek() == '_')) {
            const char c = get();
            if (c != '_') tok.push_back(c);
        }
        if (tok.empty()) fail("expected a value");
        std::string body = tok;
        double sign = 1.0;
        if (body[0] == '+' || body[0] == '-') {
            sign = body[0] == '-' ? -1.0 : 1.0;
            body.erase(0, 1);
        }
        if (body == "inf") return sign * std::numeric_limits<double>::infinity();
        if (body == "nan") return std::numeric_limits<double>::quiet_NaN();

        const bool is_float = tok.find_first_of(".eE") != std::string::npos;
        std::size_t used = 0;
        try {
            if (is_float) {
                const double v = std::stod(tok, &used);
                if (used == tok.size()) return v;
            } else {
                const long long v = std::stoll(tok, &used, 10);
                if (used == tok.size()) return v;
            }
        } catch (const std::exception&) {
        }
        fail("invalid value '" + tok + "'");
    }

    std::string_view s_;
    std::size_t pos_ = 0;
    int line_ = 1;
};

// ---------------------------------------------------------------------------
// JSON <-> config

json encode_double(double v) {
    if (std::isfinite(v)) return v;
    return v > 0 ? "inf" : "-inf";
}

double decode_double(const json& j, const char* key) {
    if (j.is_number()) return j.get<double>();
    if (j.is_string()) {
        const auto s = j.get<std::string>();
        if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
        if (s == "-inf") return -std::numeric_limits<double>::infinity();
    }
    throw std::invalid_argument(std::string("config: '") + key + "' must be a number");
}

Vec3 decode_vec3(const json& j, const char* key) {
    if (!j.is_array() || j.size() != 3) {
        throw std::invalid_argument(std::string("config: '") + key + "' must be a 3-element array");
    }
    return Vec3(decode_double(j[0], key), decode_double(j[1], key), decode_double(j[2], key));
}

json encode_vec3(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

template <typename T>
void read_opt(const json& obj, const char* key, T& out) {
    if (!obj.contains(key)) return;
    if constexpr (std::is_same_v<T, double>) {
        out = decode_double(obj.at(key), key);
    } else {
        out = obj.at(key).get<T>();
    }
}

template <typename T>
void read_opt(const json& obj, const char* key, std::optional<T>& out) {
    if (!obj.contains(key)) return;
    T v{};
    read_opt(obj, key, v);
    out = v;
}

void check_known_keys(const json& obj, std::initializer_list<const char*> keys, const std::string& where) {
    for (const auto& [k, v] : obj.items()) {
        bool known = false;
        for (const char* key : keys) known = known || k == key;
        if (!known) throw std::invalid_argument("config: unknown key '" + k + "' in " + where);
    }
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

json parse_toml(std::string_view text) { return TomlParser(text).parse(); }

ExperimentConfig config_from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("config: top level must be a table");
    check_known_keys(j, {"name", "headmodel", "source", "noise", "solvers", "seeds", "output_dir"}, "config");

    ExperimentConfig c;
    read_opt(j, "name", c.name);
    read_opt(j, "output_dir", c.output_dir);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();

    if (j.contains("headmodel")) {
        const auto& h = j.at("headmodel");
        check_known_keys(h,
                         {"sphere_radius_mm", "region_radius_mm", "grid_spacing_mm", "n_sensors",
                          "sensor_shell_radius_mm", "coverage_fraction", "gradiometer_baseline_mm",
                          "min_source_radius_mm"},
                         "[headmodel]");
        auto& hm = c.headmodel;
        read_opt(h, "sphere_radius_mm", hm.sphere_radius_mm);
        read_opt(h, "region_radius_mm", hm.region_radius_mm);
        read_opt(h, "grid_spacing_mm", hm.grid_spacing_mm);
        read_opt(h, "n_sensors", hm.n_sensors);
        read_opt(h, "sensor_shell_radius_mm", hm.sensor_shell_radius_mm);
        read_opt(h, "coverage_fraction", hm.coverage_fraction);
        read_opt(h, "gradiometer_baseline_mm", hm.gradiometer_baseline_mm);
        read_opt(h, "min_source_radius_mm", hm.min_source_radius_mm);
    }
    if (j.contains("source")) {
        const auto& s = j.at("source");
        check_known_keys(s, {"nearest_to", "moment_nam", "amplitude_nam", "label"}, "[source]");
        if (s.contains("nearest_to")) c.source.nearest_to = decode_vec3(s.at("nearest_to"), "nearest_to");
        if (s.contains("moment_nam")) c.source.moment_nam = decode_vec3(s.at("moment_nam"), "moment_nam");
        read_opt(s, "amplitude_nam", c.source.amplitude_nam);
        read_opt(s, "label", c.source.label);
    }
    if (j.contains("noise")) {
        const auto& n = j.at("noise");
        check_known_keys(n, {"target_psnr_db", "seed", "shape", "diagonal", "estimate_from_draws"}, "[noise]");
        read_opt(n, "target_psnr_db", c.noise.target_psnr_db);
        read_opt(n, "seed", c.noise.seed);
        read_opt(n, "shape", c.noise.shape);
        if (n.contains("diagonal")) c.noise.diagonal = n.at("diagonal").get<std::vector<double>>();
        read_opt(n, "estimate_from_draws", c.noise.estimate_from_draws);
    }
    if (j.contains("solvers")) {
        for (const auto& s : j.at("solvers")) {
            check_known_keys(s, {"method", "lambda_grid", "p_grid", "deep_prior"}, "[[solvers]]");
            SolverConfig sc;
            sc.method = s.at("method").get<std::string>();
            sc.lambda_grid = s.at("lambda_grid").get<std::vector<double>>();
            if (s.contains("p_grid")) sc.p_grid = s.at("p_grid").get<std::vector<double>>();
            if (s.contains("deep_prior")) {
                const auto& d = s.at("deep_prior");
                check_known_keys(d,
                                 {"iterations", "learning_rate", "init_scale", "snapshot_every", "beta1",
                                  "beta2", "epsilon"},
                                 "[solvers.deep_prior]");
                read_opt(d, "iterations", sc.deep_prior.iterations);
                read_opt(d, "learning_rate", sc.deep_prior.learning_rate);
                read_opt(d, "init_scale", sc.deep_prior.init_scale);
                read_opt(d, "snapshot_every", sc.deep_prior.snapshot_every);
                read_opt(d, "beta1", sc.deep_prior.beta1);
                read_opt(d, "beta2", sc.deep_prior.beta2);
                read_opt(d, "epsilon", sc.deep_prior.epsilon);
            }
            c.solvers.push_back(std::move(sc));
        }
    }
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    json j;
    j["name"] = c.name;
    j["output_dir"] = c.output_dir;
    j["seeds"] = c.seeds;
    const auto& hm = c.headmodel;
    j["headmodel"] = {{"sphere_radius_mm", hm.sphere_radius_mm},
                      {"region_radius_mm", hm.region_radius_mm},
                      {"grid_spacing_mm", hm.grid_spacing_mm},
                      {"n_sensors", hm.n_sensors},
                      {"sensor_shell_radius_mm", hm.sensor_shell_radius_mm},
                      {"coverage_fraction", hm.coverage_fraction},
                      {"gradiometer_baseline_mm", hm.gradiometer_baseline_mm},
                      {"min_source_radius_mm", hm.min_source_radius_mm}};
    j["source"] = {{"nearest_to", encode_vec3(c.source.nearest_to)},
                   {"amplitude_nam", c.source.amplitude_nam},
                   {"label", c.source.label}};
    if (c.source.moment_nam) j["source"]["moment_nam"] = encode_vec3(*c.source.moment_nam);
    j["noise"] = {{"target_psnr_db", encode_double(c.noise.target_psnr_db)},
                  {"seed", c.noise.seed},
                  {"shape", c.noise.shape},
                  {"estimate_from_draws", c.noise.estimate_from_draws}};
    if (!c.noise.diagonal.empty()) j["noise"]["diagonal"] = c.noise.diagonal;
    j["solvers"] = json::array();
    for (const auto& s : c.solvers) {
        json sj = {{"method", s.method}, {"lambda_grid", s.lambda_grid}, {"p_grid", s.p_grid}};
        json d = json::object();
        const auto& o = s.deep_prior;
        if (o.iterations) d["iterations"] = *o.iterations;
        if (o.learning_rate) d["learning_rate"] = *o.learning_rate;
        if (o.init_scale) d["init_scale"] = *o.init_scale;
        if (o.snapshot_every) d["snapshot_every"] = *o.snapshot_every;
        if (o.beta1) d["beta1"] = *o.beta1;
        if (o.beta2) d["beta2"] = *o.beta2;
        if (o.epsilon) d["epsilon"] = *o.epsilon;
        if (!d.empty()) sj["deep_prior"] = d;
        j["solvers"].push_back(sj);
    }
    return j;
}

void validate(const ExperimentConfig& c) {
    auto bad = [](const std::string& what) { throw std::invalid_argument("config: " + what); };
    const auto& hm = c.headmodel;
    if (!(hm.grid_spacing_mm > 0)) bad("grid_spacing_mm must be positive");
    if (!(hm.region_radius_mm > 0 && hm.region_radius_mm < hm.sphere_radius_mm)) {
        bad("region_radius_mm must lie in (0, sphere_radius_mm)");
    }
    if (!(hm.sensor_shell_radius_mm > hm.sphere_radius_mm)) bad("sensor_shell_radius_mm must exceed sphere_radius_mm");
    if (hm.n_sensors < 1) bad("n_sensors must be >= 1");
    if (!(hm.coverage_fraction > 0 && hm.coverage_fraction <= 1)) bad("coverage_fraction must lie in (0, 1]");
    if (hm.min_source_radius_mm < 0) bad("min_source_radius_mm must be >= 0");
    if (c.source.moment_nam && c.source.moment_nam->norm() == 0) bad("source moment must be non-zero");
    if (!c.source.moment_nam && !(c.source.amplitude_nam > 0)) bad("amplitude_nam must be positive");
    if (std::isnan(c.noise.target_psnr_db) || c.noise.target_psnr_db == -std::numeric_limits<double>::infinity()) {
        bad("target_psnr_db must be finite or inf");
    }
    if (c.noise.shape != "identity" && c.noise.shape != "diagonal") {
        bad("noise shape must be 'identity' or 'diagonal' in experiment files");
    }
    if (c.noise.shape == "diagonal" && c.noise.diagonal.size() != static_cast<std::size_t>(hm.n_sensors)) {
        bad("noise diagonal must have n_sensors entries");
    }
    if (c.solvers.empty()) bad("at least one solver is required");
    if (c.seeds.empty()) bad("seeds must be non-empty");
    for (const auto& s : c.solvers) {
        if (s.method != "mne" && s.method != "sloreta" && s.method != "deep_prior") {
            bad("unknown solver method '" + s.method + "'");
        }
        if (s.lambda_grid.empty()) bad(s.method + ": lambda_grid must be non-empty");
        for (std::size_t i = 0; i < s.lambda_grid.size(); ++i) {
            if (!(s.lambda_grid[i] >= 0) || !std::isfinite(s.lambda_grid[i])) bad(s.method + ": lambda values must be >= 0");
            if (i > 0 && !(s.lambda_grid[i] > s.lambda_grid[i - 1])) {
                bad(s.method + ": lambda_grid must be strictly increasing");
            }
        }
        if (s.p_grid.empty()) bad(s.method + ": p_grid must be non-empty");
        if (s.method == "sloreta" && (s.p_grid.size() != 1 || s.p_grid[0] != 0.0)) {
            bad("sloreta: p_grid must be [0]; standardization replaces depth weighting");
        }
        for (double p : s.p_grid) {
            if (!std::isfinite(p) || p < 0) bad(s.method + ": p values must be finite and >= 0");
        }
        if (s.deep_prior.iterations && *s.deep_prior.iterations < 1) bad("deep_prior iterations must be >= 1");
        if (s.deep_prior.learning_rate && !(*s.deep_prior.learning_rate > 0)) {
            bad("deep_prior learning_rate must be > 0");
        }
    }
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    const json j = path.extension() == ".json" ? json::parse(text) : parse_toml(text);
    return config_from_json(j);
}

std::string config_hash(const ExperimentConfig& config) {
    json j = config_to_json(config);
    j.erase("output_dir");
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(fnv1a(j.dump())));
    return hex;
}

std::vector<double> log_grid(double lo, double hi, int count, bool include_zero) {
    std::vector<double> out;
    if (include_zero) out.push_back(0.0);
    if (count == 1) {
        out.push_back(lo);
        return out;
    }
    const double a = std::log10(lo), b = std::log10(hi);
    for (int i = 0; i < count; ++i) out.push_back(std::pow(10.0, a + (b - a) * i / (count - 1)));
    return out;
}

DeepPriorConfig deep_prior_config(const DeepPriorOverrides& o, double lambda, double p, std::uint64_t seed) {
    DeepPriorConfig d;
    d.lambda = lambda;
    d.p = p;
    d.seed = seed;
    if (o.iterations) d.iterations = *o.iterations;
    if (o.learning_rate) d.learning_rate = *o.learning_rate;
    if (o.init_scale) d.init_scale = *o.init_scale;
    if (o.snapshot_every) d.snapshot_every = *o.snapshot_every;
    if (o.beta1) d.adam.beta1 = *o.beta1;
    if (o.beta2) d.adam.beta2 = *o.beta2;
    if (o.epsilon) d.adam.epsilon = *o.epsilon;
    return d;
}

std::vector<std::string> builtin_config_names() { return {"shallow-analog", "deep-analog"}; }

ExperimentConfig builtin_config(std::string_view name) {
    double fraction = 0.0;
    if (name == "shallow-analog") {
        fraction = 0.75;
    } else if (name == "deep-analog") {
        fraction = 0.35;
    } else {
        throw std::invalid_argument("unknown built-in config '" + std::string(name) + "'");
    }
    ExperimentConfig c;
    c.name = std::string(name);
    c.output_dir = "neuroloc-out/" + c.name;
    const Vec3 direction = Vec3(0.6, 0.3, 0.74).normalized();
    c.source.nearest_to = fraction * c.headmodel.region_radius_mm * direction;
    c.source.label = c.name;
    c.seeds = {1, 2, 3};

    c.solvers.push_back({"mne", log_grid(1e-3, 1e3, 13), {0.0, 0.5}, {}});
    c.solvers.push_back({"sloreta", log_grid(1e-3, 1e3, 13), {0.0}, {}});
    c.solvers.push_back({"deep_prior", log_grid(1e-3, 1e3, 13, true), {0.5}, {}});
    return c;
}

}  // namespace neuroloc
