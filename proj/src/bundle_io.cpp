#include "neuroloc/bundle_io.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace neuroloc {

static_assert(std::endian::native == std::endian::little, "bundle payloads are little-endian");

namespace {

constexpr const char* kFormat = "neuroloc-bundle";
constexpr int kVersion = 1;

// JSON has no infinity; non-finite scalars are stored as strings.
nlohmann::json encode_double(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

double decode_double(const nlohmann::json& j) {
    if (j.is_number()) return j.get<double>();
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw std::runtime_error("bundle: bad number '" + s + "'");
}

}  // namespace

void Bundle::add(const std::string& name, ArrayBlock block) {
    if (arrays.count(name) == 0) order.push_back(name);
    arrays[name] = std::move(block);
}

const ArrayBlock& Bundle::at(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw std::runtime_error("bundle: missing array '" + name + "'");
    return it->second;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

void write_bundle(const std::filesystem::path& path, const Bundle& bundle) {
    nlohmann::json header = bundle.header;
    header["format"] = kFormat;
    header["version"] = kVersion;
    header["dtype"] = "float64";
    header["byte_order"] = "little";
    header["arrays"] = nlohmann::json::array();
    for (const auto& name : bundle.order) {
        const auto& block = bundle.at(name);
        std::size_t count = 1;
        for (auto d : block.shape) count *= d;
        if (count != block.data.size()) {
            throw std::invalid_argument("write_bundle: array '" + name + "' has inconsistent shape");
        }
        header["arrays"].push_back({{"name", name}, {"shape", block.shape}, {"order", "row-major"}});
    }

    std::string out = header.dump() + "\n";
    for (const auto& name : bundle.order) {
        const auto& data = bundle.at(name).data;
        out.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double));
    }
    write_file_atomic(path, out);
}

Bundle read_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line);

    Bundle bundle;
    bundle.header = nlohmann::json::parse(line);
    if (bundle.header.value("format", "") != kFormat || bundle.header.value("version", 0) != kVersion) {
        throw std::runtime_error(path.string() + ": not a neuroloc bundle (version " +
                                 std::to_string(kVersion) + ")");
    }
    for (const auto& entry : bundle.header.at("arrays")) {
        ArrayBlock block;
        block.shape = entry.at("shape").get<std::vector<std::size_t>>();
        std::size_t count = 1;
        for (auto d : block.shape) count *= d;
        block.data.resize(count);
        in.read(reinterpret_cast<char*>(block.data.data()), static_cast<std::streamsize>(count * sizeof(double)));
        if (!in) throw std::runtime_error(path.string() + ": truncated payload");
        bundle.add(entry.at("name").get<std::string>(), std::move(block));
    }
    return bundle;
}

ArrayBlock to_block(const Eigen::MatrixXd& m) {
    ArrayBlock b;
    b.shape = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
    b.data.resize(static_cast<std::size_t>(m.size()));
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(b.data.data(), m.rows(),
                                                                                       m.cols()) = m;
    return b;
}

ArrayBlock to_block(const Eigen::VectorXd& v) {
    return ArrayBlock{{static_cast<std::size_t>(v.size())}, std::vector<double>(v.begin(), v.end())};
}

Eigen::MatrixXd matrix_from_block(const ArrayBlock& b) {
    if (b.shape.size() != 2) throw std::runtime_error("bundle: expected a matrix");
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        b.data.data(), static_cast<Eigen::Index>(b.shape[0]), static_cast<Eigen::Index>(b.shape[1]));
}

Eigen::VectorXd vector_from_block(const ArrayBlock& b) {
    if (b.shape.size() != 1) throw std::runtime_error("bundle: expected a vector");
    return Eigen::Map<const Eigen::VectorXd>(b.data.data(), static_cast<Eigen::Index>(b.shape[0]));
}

void save_lead_field(const std::filesystem::path& path, const LeadField& lead) {
    Bundle b;
    b.header["kind"] = "lead_field";
    b.header["rows"] = lead.matrix.rows();
    b.header["cols"] = lead.matrix.cols();
    b.header["units"] = "fT/nAm";
    b.header["row_ordering"] = "sensor index";
    b.header["column_ordering"] = "3k+c: point k in raster order (x fastest, then y, then z), c = x,y,z moment";
    if (lead.space) {
        b.header["grid_spacing_mm"] = lead.space->grid_spacing;
        b.header["grid_dims"] = lead.space->grid_dims;
    }
    b.add("matrix", to_block(lead.matrix));
    write_bundle(path, b);
}

Eigen::MatrixXd load_lead_field_matrix(const std::filesystem::path& path) {
    const Bundle b = read_bundle(path);
    if (b.header.value("kind", "") != "lead_field") throw std::runtime_error(path.string() + ": not a lead field");
    return matrix_from_block(b.at("matrix"));
}

void save_observation(const std::filesystem::path& path, const Observation& obs) {
    Bundle b;
    b.header["kind"] = "observation";
    b.header["psnr_db"] = encode_double(obs.psnr_db);
    b.header["rng_seed"] = obs.rng_seed;
    b.header["units"] = "fT";
    b.add("b_obs", to_block(obs.b_obs));
    b.add("clean", to_block(obs.clean));
    b.add("noise_cov", to_block(obs.noise_cov));
    write_bundle(path, b);
}

Observation load_observation(const std::filesystem::path& path) {
    const Bundle b = read_bundle(path);
    if (b.header.value("kind", "") != "observation") throw std::runtime_error(path.string() + ": not an observation");
    Observation obs;
    obs.psnr_db = decode_double(b.header.at("psnr_db"));
    obs.rng_seed = b.header.at("rng_seed").get<std::uint64_t>();
    obs.b_obs = vector_from_block(b.at("b_obs"));
    obs.clean = vector_from_block(b.at("clean"));
    obs.noise_cov = matrix_from_block(b.at("noise_cov"));
    return obs;
}

void save_estimate(const std::filesystem::path& path, const CurrentEstimate& est) {
    Bundle b;
    b.header["kind"] = "current_estimate";
    b.header["method"] = est.method;
    b.header["lambda"] = est.lambda;
    b.header["p"] = est.p;
    b.header["units"] = "nAm";
    nlohmann::json diag = nlohmann::json::object();
    for (const auto& [k, v] : est.diagnostics) diag[k] = encode_double(v);
    b.header["diagnostics"] = diag;
    b.add("q_hat", to_block(est.q_hat));
    b.add("per_point_amplitude", to_block(est.per_point_amplitude));
    write_bundle(path, b);
}

CurrentEstimate load_estimate(const std::filesystem::path& path) {
    const Bundle b = read_bundle(path);
    if (b.header.value("kind", "") != "current_estimate") {
        throw std::runtime_error(path.string() + ": not a current estimate");
    }
    CurrentEstimate est;
    est.method = b.header.at("method").get<std::string>();
    est.lambda = b.header.at("lambda").get<double>();
    est.p = b.header.at("p").get<double>();
    for (const auto& [k, v] : b.header.at("diagnostics").items()) est.diagnostics[k] = decode_double(v);
    est.q_hat = vector_from_block(b.at("q_hat"));
    est.per_point_amplitude = vector_from_block(b.at("per_point_amplitude"));
    return est;
}

}  // namespace neuroloc
