#pragma once

// Binary bundles: one line of compact JSON header, then the raw little-endian f64
// payload of every array listed in header["arrays"], back to back.
//
//   {"format":"neuroloc-bundle","version":1,"dtype":"float64","byte_order":"little",
//    "arrays":[{"name":"matrix","shape":[60,4254],"order":"row-major"}], ...}\n
//   <payload>
//
// numpy: header = json.loads(f.readline()); data = np.fromfile(f, "<f8")

#include "neuroloc/headmodel.hpp"
#include "neuroloc/linear_solvers.hpp"
#include "neuroloc/simulate.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace neuroloc {

struct ArrayBlock {
    std::vector<std::size_t> shape;
    std::vector<double> data;  // row-major
};

struct Bundle {
    nlohmann::json header;  // metadata; "arrays" is filled in on write
    std::map<std::string, ArrayBlock> arrays;
    std::vector<std::string> order;  // array order in the payload

    void add(const std::string& name, ArrayBlock block);
    const ArrayBlock& at(const std::string& name) const;
};

void write_bundle(const std::filesystem::path& path, const Bundle& bundle);
Bundle read_bundle(const std::filesystem::path& path);

ArrayBlock to_block(const Eigen::MatrixXd& m);  // row-major
ArrayBlock to_block(const Eigen::VectorXd& v);
Eigen::MatrixXd matrix_from_block(const ArrayBlock& b);
Eigen::VectorXd vector_from_block(const ArrayBlock& b);

/// Lead field as an M x 3N row-major matrix with dims, column ordering and units in
/// the header.
void save_lead_field(const std::filesystem::path& path, const LeadField& lead);
Eigen::MatrixXd load_lead_field_matrix(const std::filesystem::path& path);

void save_observation(const std::filesystem::path& path, const Observation& obs);
Observation load_observation(const std::filesystem::path& path);

void save_estimate(const std::filesystem::path& path, const CurrentEstimate& est);
CurrentEstimate load_estimate(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace neuroloc
