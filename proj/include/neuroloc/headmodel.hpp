#pragma once

// Spherical head geometry, source lattice, sensor array and the analytic lead field.
//
// Units: positions in mm, dipole moments in nAm, sensor readings in fT. A lead-field
// entry is therefore fT per nAm.

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <memory>
#include <vector>

namespace neuroloc {

using Vec3 = Eigen::Vector3d;

/// Regular lattice of candidate source locations inside the conductor.
///
/// Lattice cell (ix, iy, iz) sits at origin + grid_spacing * (ix, iy, iz). The
/// masked-in cells form `points`, listed in raster order with x varying fastest,
/// then y, then z. Current vectors are laid out point-major: entries 3k, 3k+1, 3k+2
/// hold the x, y, z moment of point k.
struct SourceSpace {
    double grid_spacing = 0.0;
    Vec3 origin = Vec3::Zero();
    std::array<int, 3> grid_dims{0, 0, 0};
    std::vector<bool> mask;               // nx*ny*nz, raster order
    std::vector<Vec3> points;             // masked-in cells, raster order
    std::vector<std::size_t> cell_index;  // raster cell index of each point

    std::size_t size() const { return points.size(); }
    std::size_t cell_count() const {
        return static_cast<std::size_t>(grid_dims[0]) * grid_dims[1] * grid_dims[2];
    }
    std::size_t raster(int ix, int iy, int iz) const {
        return static_cast<std::size_t>(ix) +
               static_cast<std::size_t>(grid_dims[0]) *
                   (static_cast<std::size_t>(iy) + static_cast<std::size_t>(grid_dims[1]) * iz);
    }
    std::array<int, 3> cell_coords(std::size_t cell) const;

    /// Copy with every point closer than `min_radius` to the sphere center removed.
    /// The grid and raster order of the remaining points are unchanged.
    SourceSpace without_center(double min_radius) const;
};

/// Lattice points with |p| <= region_radius, lattice aligned so the origin is a point.
SourceSpace build_source_space(double sphere_radius, double region_radius, double grid_spacing);

enum class SensorKind { magnetometer, planar_gradiometer };

struct SensorArray {
    std::vector<Vec3> positions;     // mm
    std::vector<Vec3> orientations;  // unit vectors
    std::vector<SensorKind> kinds;
    std::vector<Vec3> baselines;  // gradiometer: displacement between the two pickup points (mm)
    Vec3 sphere_center = Vec3::Zero();
    double sphere_radius = 0.0;

    std::size_t size() const { return positions.size(); }
};

struct SensorLayout {
    int n_sensors = 60;
    double shell_radius = 120.0;
    double sphere_radius = 90.0;
    /// Fraction of the full sphere surface covered, measured from the +z pole.
    /// 0.5 is the upper hemisphere, 1.0 the full sphere.
    double coverage_fraction = 0.5;
    /// When positive, two of every three sensors become planar gradiometers with
    /// this baseline (mm), alternating between the polar and azimuthal directions.
    double gradiometer_baseline = 0.0;
};

/// Radially oriented sensors on a Fibonacci spiral over the coverage cap.
/// Sensor 0 sits at the +z pole.
SensorArray build_sensor_array(const SensorLayout& layout);

struct LeadField {
    Eigen::MatrixXd matrix;  // M x 3N, fT / nAm
    std::shared_ptr<const SourceSpace> space;
    std::shared_ptr<const SensorArray> sensors;

    Eigen::Index n_sensors() const { return matrix.rows(); }
    std::size_t n_points() const { return static_cast<std::size_t>(matrix.cols() / 3); }
};

/// Magnetic field (fT) at `sensor` of a dipole `moment` (nAm) at `source`, both
/// relative to the center of a homogeneous conducting sphere. Includes the volume
/// current contribution; the sphere radius does not enter.
Vec3 dipole_field(const Vec3& source, const Vec3& moment, const Vec3& sensor);

LeadField compute_lead_field(std::shared_ptr<const SourceSpace> space,
                             std::shared_ptr<const SensorArray> sensors);

}  // namespace neuroloc
