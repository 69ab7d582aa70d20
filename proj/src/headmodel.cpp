#include "neuroloc/headmodel.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace neuroloc {

namespace {

// mu0 / 4pi = 1e-7 T m / A. With lengths in mm, moments in nAm and fields in fT the
// combined scale is 1e-7 * 1e-9 * 1e15 * 1e6 (the formula scales as 1/length^2).
constexpr double kFieldScale = 1e5;

constexpr double kSingularDistance = 1e-6;  // mm

}  // namespace

std::array<int, 3> SourceSpace::cell_coords(std::size_t cell) const {
    const auto nx = static_cast<std::size_t>(grid_dims[0]);
    const auto ny = static_cast<std::size_t>(grid_dims[1]);
    return {static_cast<int>(cell % nx), static_cast<int>((cell / nx) % ny),
            static_cast<int>(cell / (nx * ny))};
}

SourceSpace SourceSpace::without_center(double min_radius) const {
    SourceSpace out = *this;
    out.points.clear();
    out.cell_index.clear();
    for (std::size_t k = 0; k < points.size(); ++k) {
        if (points[k].norm() < min_radius) {
            out.mask[cell_index[k]] = false;
            continue;
        }
        out.points.push_back(points[k]);
        out.cell_index.push_back(cell_index[k]);
    }
    return out;
}

SourceSpace build_source_space(double sphere_radius, double region_radius, double grid_spacing) {
    if (!(grid_spacing > 0.0)) {
        throw std::invalid_argument("build_source_space: grid_spacing must be positive");
    }
    if (!(region_radius > 0.0) || !(region_radius < sphere_radius)) {
        throw std::invalid_argument(
            "build_source_space: need 0 < region_radius < sphere_radius (sources must be interior)");
    }

    const int half = static_cast<int>(std::floor(region_radius / grid_spacing));
    const int n = 2 * half + 1;

    SourceSpace space;
    space.grid_spacing = grid_spacing;
    space.origin = Vec3::Constant(-half * grid_spacing);
    space.grid_dims = {n, n, n};
    space.mask.assign(space.cell_count(), false);

    for (int iz = 0; iz < n; ++iz) {
        for (int iy = 0; iy < n; ++iy) {
            for (int ix = 0; ix < n; ++ix) {
                const Vec3 p = space.origin + grid_spacing * Vec3(ix, iy, iz);
                if (p.norm() <= region_radius) {
                    const std::size_t cell = space.raster(ix, iy, iz);
                    space.mask[cell] = true;
                    space.points.push_back(p);
                    space.cell_index.push_back(cell);
                }
            }
        }
    }
    return space;
}

SensorArray build_sensor_array(const SensorLayout& layout) {
    if (layout.n_sensors < 1) {
        throw std::invalid_argument("build_sensor_array: n_sensors must be >= 1");
    }
    if (!(layout.shell_radius > layout.sphere_radius)) {
        throw std::invalid_argument(
            "build_sensor_array: shell_radius must exceed the conductor sphere radius");
    }
    if (!(layout.coverage_fraction > 0.0) || layout.coverage_fraction > 1.0) {
        throw std::invalid_argument("build_sensor_array: coverage_fraction must lie in (0, 1]");
    }

    const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
    const int n = layout.n_sensors;

    SensorArray array;
    array.sphere_radius = layout.sphere_radius;
    for (int i = 0; i < n; ++i) {
        // Equal-area bands in z; band 0 starts at the pole.
        const double z = 1.0 - 2.0 * layout.coverage_fraction * i / n;
        const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden_angle * i;
        const Vec3 dir(rho * std::cos(phi), rho * std::sin(phi), z);

        array.positions.push_back(layout.shell_radius * dir);
        array.orientations.push_back(dir);

        const bool gradiometer = layout.gradiometer_baseline > 0.0 && (i % 3) != 0;
        if (!gradiometer) {
            array.kinds.push_back(SensorKind::magnetometer);
            array.baselines.push_back(Vec3::Zero());
            continue;
        }
        // Local tangent frame; at the pole pick x/y.
        Vec3 e_theta(std::cos(phi) * z, std::sin(phi) * z, -rho);
        Vec3 e_phi(-std::sin(phi), std::cos(phi), 0.0);
        if (rho < 1e-12) {
            e_theta = Vec3::UnitX();
            e_phi = Vec3::UnitY();
        }
        const Vec3& tangent = (i % 3 == 1) ? e_theta : e_phi;
        array.kinds.push_back(SensorKind::planar_gradiometer);
        array.baselines.push_back(layout.gradiometer_baseline * tangent.normalized());
    }
    return array;
}

Vec3 dipole_field(const Vec3& source, const Vec3& moment, const Vec3& sensor) {
    const Vec3 a_vec = sensor - source;
    const double a = a_vec.norm();
    const double r = sensor.norm();
    const double a_dot_r = a_vec.dot(sensor);

    const double F = a * (r * a + r * r - source.dot(sensor));
    const Vec3 grad_F = (a * a / r + a_dot_r / a + 2.0 * a + 2.0 * r) * sensor -
                        (a + 2.0 * r + a_dot_r / a) * source;

    const Vec3 q_cross_r0 = moment.cross(source);
    return kFieldScale / (F * F) * (F * q_cross_r0 - q_cross_r0.dot(sensor) * grad_F);
}

LeadField compute_lead_field(std::shared_ptr<const SourceSpace> space,
                             std::shared_ptr<const SensorArray> sensors) {
    if (!space || !sensors) {
        throw std::invalid_argument("compute_lead_field: null source space or sensor array");
    }
    const Vec3& center = sensors->sphere_center;
    const double radius = sensors->sphere_radius;
    for (std::size_t k = 0; k < space->size(); ++k) {
        if (!((space->points[k] - center).norm() < radius)) {
            throw std::invalid_argument("compute_lead_field: source point " + std::to_string(k) +
                                        " is not strictly inside the conductor sphere");
        }
    }
    for (std::size_t i = 0; i < sensors->size(); ++i) {
        if (!((sensors->positions[i] - center).norm() > radius)) {
            throw std::invalid_argument("compute_lead_field: sensor " + std::to_string(i) +
                                        " is not strictly outside the conductor sphere");
        }
    }

    const auto m = static_cast<Eigen::Index>(sensors->size());
    const auto n = static_cast<Eigen::Index>(space->size());

    LeadField lead;
    lead.matrix.setZero(m, 3 * n);
    lead.space = space;
    lead.sensors = sensors;

    for (Eigen::Index k = 0; k < n; ++k) {
        const Vec3 r0 = space->points[k] - center;
        for (Eigen::Index i = 0; i < m; ++i) {
            const Vec3 pos = sensors->positions[i] - center;
            const Vec3& orient = sensors->orientations[i];
            const bool grad = sensors->kinds[i] == SensorKind::planar_gradiometer;
            const Vec3 half = 0.5 * sensors->baselines[i];

            const Vec3 p_plus = grad ? Vec3(pos + half) : pos;
            const Vec3 p_minus = pos - half;
            if ((p_plus - r0).norm() < kSingularDistance ||
                (grad && (p_minus - r0).norm() < kSingularDistance)) {
                throw std::domain_error("compute_lead_field: source point " + std::to_string(k) +
                                        " coincides with sensor " + std::to_string(i));
            }
            for (int c = 0; c < 3; ++c) {
                const Vec3 unit = Vec3::Unit(c);
                double value = dipole_field(r0, unit, p_plus).dot(orient);
                if (grad) {
                    value -= dipole_field(r0, unit, p_minus).dot(orient);
                }
                lead.matrix(i, 3 * k + c) = value;
            }
        }
    }
    return lead;
}

}  // namespace neuroloc
