#include "neuroloc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace neuroloc::ad {

std::string to_string(const Shape& shape) {
    std::ostringstream out;
    out << "(";
    for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
    out << ")";
    return out.str();
}

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(op + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

[[noreturn]] void shape_error(const std::string& op, const Shape& a, const std::string& what) {
    throw std::invalid_argument(op + ": shape " + to_string(a) + " " + what);
}

using DataPtr = std::shared_ptr<TensorData>;

void ensure_grad(TensorData& t) {
    if (t.grad.empty()) t.grad.assign(t.value.size(), 0.0);
}

}  // namespace

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return from(shape, std::vector<double>(ad::numel(shape), 0.0), requires_grad);
}

Tensor Tensor::from(const Shape& shape, std::vector<double> values, bool requires_grad) {
    if (values.size() != ad::numel(shape)) {
        throw std::invalid_argument("Tensor::from: " + std::to_string(values.size()) +
                                    " values for shape " + ad::to_string(shape));
    }
    auto data = std::make_shared<TensorData>();
    data->shape = shape;
    data->value = std::move(values);
    data->requires_grad = requires_grad;
    return Tensor(std::move(data));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return data_->shape; }
std::size_t Tensor::numel() const { return data_->value.size(); }
bool Tensor::requires_grad() const { return data_->requires_grad; }
std::span<const double> Tensor::values() const { return data_->value; }

std::span<double> Tensor::mutable_values() {
    if (data_->node) throw std::logic_error("mutable_values: tensor is not a leaf");
    return data_->value;
}

std::span<const double> Tensor::grad() const { return data_->grad; }
bool Tensor::has_grad() const { return !data_->grad.empty(); }

double Tensor::item() const {
    if (numel() != 1) shape_error("item", shape(), "is not a scalar");
    return data_->value[0];
}

void Tensor::zero_grad() {
    data_->grad.clear();
    data_->grad_pending = false;
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::string op,
                           std::vector<Tensor> inputs,
                           std::function<void(const TensorData& out)> backward) {
    auto data = std::make_shared<TensorData>();
    data->shape = std::move(shape);
    data->value = std::move(values);
    const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                   [](const Tensor& t) { return t.requires_grad(); });
    if (needs) {
        data->requires_grad = true;
        auto node = std::make_shared<Node>();
        node->op = std::move(op);
        for (auto& t : inputs) node->inputs.push_back(t.data_);
        node->backward = std::move(backward);
        data->node = std::move(node);
    }
    return Tensor(std::move(data));
}

void Tensor::backward() {
    if (numel() != 1) shape_error("backward", shape(), "is not a scalar loss");
    if (data_->consumed) {
        throw std::logic_error("backward: already called on this loss; rebuild the graph");
    }
    if (!data_->requires_grad) {
        throw std::logic_error("backward: loss does not depend on any tensor requiring gradients");
    }

    // Post-order DFS, each tensor visited once.
    std::vector<TensorData*> order;
    std::unordered_set<TensorData*> seen;
    std::vector<std::pair<TensorData*, std::size_t>> stack{{data_.get(), 0}};
    seen.insert(data_.get());
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        if (t->node && next < t->node->inputs.size()) {
            TensorData* child = t->node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
            continue;
        }
        order.push_back(t);
        stack.pop_back();
    }

    for (TensorData* t : order) {
        if (t->grad_pending) {
            throw std::logic_error(
                "backward: a reachable tensor still holds gradients from a previous pass; call "
                "zero_grad() first");
        }
    }

    ensure_grad(*data_);
    data_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorData* t = *it;
        if (!t->node) continue;
        for (auto& in : t->node->inputs) {
            if (in->requires_grad) ensure_grad(*in);
        }
        t->node->backward(*t);
    }
    for (TensorData* t : order) {
        t->node.reset();
        t->grad_pending = true;
    }
    data_->consumed = true;
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

bool is_scalar_broadcast(const Tensor& a, const Tensor& b) {
    return b.numel() == 1 && a.numel() != 1;
}

void check_elementwise(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() && !is_scalar_broadcast(a, b)) shape_error(op, a.shape(), b.shape());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_elementwise("add", a, b);
    const bool bc = is_scalar_broadcast(a, b);
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[bc ? 0 : i];
    DataPtr pa = a.impl(), pb = b.impl();
    return Tensor::make_result(a.shape(), std::move(out), "add", {a, b}, [pa, pb, bc](const TensorData& o) {
        if (pa->requires_grad)
            for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
        if (pb->requires_grad)
            for (std::size_t i = 0; i < o.grad.size(); ++i) pb->grad[bc ? 0 : i] += o.grad[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_elementwise("sub", a, b);
    const bool bc = is_scalar_broadcast(a, b);
    std::vector<double> out(a.values().begin(), a.values().end());
    const auto bv = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[bc ? 0 : i];
    DataPtr pa = a.impl(), pb = b.impl();
    return Tensor::make_result(a.shape(), std::move(out), "sub", {a, b}, [pa, pb, bc](const TensorData& o) {
        if (pa->requires_grad)
            for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
        if (pb->requires_grad)
            for (std::size_t i = 0; i < o.grad.size(); ++i) pb->grad[bc ? 0 : i] -= o.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_elementwise("mul", a, b);
    const bool bc = is_scalar_broadcast(a, b);
    const auto av = a.values();
    const auto bv = b.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[bc ? 0 : i];
    DataPtr pa = a.impl(), pb = b.impl();
    return Tensor::make_result(a.shape(), std::move(out), "mul", {a, b}, [pa, pb, bc](const TensorData& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            const std::size_t j = bc ? 0 : i;
            if (pa->requires_grad) pa->grad[i] += o.grad[i] * pb->value[j];
            if (pb->requires_grad) pb->grad[j] += o.grad[i] * pa->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.values().begin(), a.values().end());
    for (double& v : out) v *= factor;
    DataPtr pa = a.impl();
    return Tensor::make_result(a.shape(), std::move(out), "scale", {a}, [pa, factor](const TensorData& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += factor * o.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || (b.shape().size() != 1 && b.shape().size() != 2) ||
        a.shape()[1] != b.shape()[0]) {
        shape_error("matmul", a.shape(), b.shape());
    }
    const std::size_t m = a.shape()[0];
    const std::size_t n = a.shape()[1];
    const std::size_t p = b.shape().size() == 2 ? b.shape()[1] : 1;
    const auto av = a.values();
    const auto bv = b.values();

    std::vector<double> out(m * p, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = av.data() + i * n;
        double* orow = out.data() + i * p;
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = arow[k];
            const double* brow = bv.data() + k * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
        }
    }
    Shape shape = b.shape().size() == 2 ? Shape{m, p} : Shape{m};
    DataPtr pa = a.impl(), pb = b.impl();
    return Tensor::make_result(std::move(shape), std::move(out), "matmul", {a, b},
                               [pa, pb, m, n, p](const TensorData& o) {
        // dA = dO B^T, dB = A^T dO
        for (std::size_t i = 0; i < m; ++i) {
            const double* grow = o.grad.data() + i * p;
            for (std::size_t k = 0; k < n; ++k) {
                const double* brow = pb->value.data() + k * p;
                if (pa->requires_grad) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < p; ++j) acc += grow[j] * brow[j];
                    pa->grad[i * n + k] += acc;
                }
                if (pb->requires_grad) {
                    const double aik = pa->value[i * n + k];
                    double* gb = pb->grad.data() + k * p;
                    for (std::size_t j = 0; j < p; ++j) gb[j] += aik * grow[j];
                }
            }
        }
    });
}

Tensor linear(const Tensor& weight, const Tensor& input, const Tensor& bias) {
    if (input.shape().size() != 1 || bias.shape().size() != 1 || weight.shape().size() != 2 ||
        weight.shape()[0] != bias.shape()[0]) {
        shape_error("linear", weight.shape(), input.shape());
    }
    return add(matmul(weight, input), bias);
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (numel(shape) != a.numel()) shape_error("reshape", a.shape(), shape);
    std::vector<double> out(a.values().begin(), a.values().end());
    DataPtr pa = a.impl();
    return Tensor::make_result(shape, std::move(out), "reshape", {a}, [pa](const TensorData& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += o.grad[i];
    });
}

Tensor gather(const Tensor& a, std::vector<std::size_t> indices) {
    const auto av = a.values();
    std::vector<double> out(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= av.size()) {
            shape_error("gather", a.shape(), "indexed at " + std::to_string(indices[i]));
        }
        out[i] = av[indices[i]];
    }
    DataPtr pa = a.impl();
    Shape shape{indices.size()};
    return Tensor::make_result(std::move(shape), std::move(out), "gather", {a},
                               [pa, idx = std::move(indices)](const TensorData& o) {
        for (std::size_t i = 0; i < idx.size(); ++i) pa->grad[idx[i]] += o.grad[i];
    });
}

Tensor slice(const Tensor& a, const Shape& start, const Shape& size) {
    const Shape& s = a.shape();
    if (start.size() != s.size() || size.size() != s.size()) shape_error("slice", s, size);
    for (std::size_t d = 0; d < s.size(); ++d) {
        if (start[d] + size[d] > s[d]) shape_error("slice", s, size);
    }
    Shape strides(s.size(), 1);
    for (std::size_t d = s.size(); d-- > 1;) strides[d - 1] = strides[d] * s[d];

    std::vector<std::size_t> idx;
    idx.reserve(numel(size));
    Shape pos(s.size(), 0);
    for (std::size_t i = 0, total = numel(size); i < total; ++i) {
        std::size_t flat = 0;
        for (std::size_t d = 0; d < s.size(); ++d) flat += (start[d] + pos[d]) * strides[d];
        idx.push_back(flat);
        for (std::size_t d = s.size(); d-- > 0;) {
            if (++pos[d] < size[d]) break;
            pos[d] = 0;
        }
    }
    return reshape(gather(a, std::move(idx)), size);
}

// ---------------------------------------------------------------------------
// Nonlinearities

Tensor relu(const Tensor& a) { return leaky_relu(a, 0.0); }

Tensor leaky_relu(const Tensor& a, double negative_slope) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] > 0.0 ? av[i] : negative_slope * av[i];
    DataPtr pa = a.impl();
    return Tensor::make_result(a.shape(), std::move(out), negative_slope == 0.0 ? "relu" : "leaky_relu",
                               {a}, [pa, negative_slope](const TensorData& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) {
            pa->grad[i] += pa->value[i] > 0.0 ? o.grad[i] : negative_slope * o.grad[i];
        }
    });
}

Tensor tanh(const Tensor& a) {
    const auto av = a.values();
    std::vector<double> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = std::tanh(av[i]);
    DataPtr pa = a.impl();
    return Tensor::make_result(a.shape(), out, "tanh", {a}, [pa, out](const TensorData& o) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) pa->grad[i] += (1.0 - out[i] * out[i]) * o.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Volumes

Tensor upsample3d_nearest(const Tensor& a, std::size_t factor) {
    const Shape& s = a.shape();
    if (s.size() != 4) shape_error("upsample3d_nearest", s, "is not (C, X, Y, Z)");
    if (factor < 1) throw std::invalid_argument("upsample3d_nearest: factor must be >= 1");
    const std::size_t c = s[0], x = s[1], y = s[2], z = s[3];
    const std::size_t ox = x * factor, oy = y * factor, oz = z * factor;
    const auto av = a.values();

    std::vector<double> out(c * ox * oy * oz);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < ox; ++i)
            for (std::size_t j = 0; j < oy; ++j) {
                const double* src = av.data() + ((ch * x + i / factor) * y + j / factor) * z;
                double* dst = out.data() + ((ch * ox + i) * oy + j) * oz;
                for (std::size_t k = 0; k < oz; ++k) dst[k] = src[k / factor];
            }

    DataPtr pa = a.impl();
    return Tensor::make_result({c, ox, oy, oz}, std::move(out), "upsample3d_nearest", {a},
                               [pa, c, x, y, z, ox, oy, oz, factor](const TensorData& o) {
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t i = 0; i < ox; ++i)
                for (std::size_t j = 0; j < oy; ++j) {
                    double* dst = pa->grad.data() + ((ch * x + i / factor) * y + j / factor) * z;
                    const double* src = o.grad.data() + ((ch * ox + i) * oy + j) * oz;
                    for (std::size_t k = 0; k < oz; ++k) dst[k / factor] += src[k];
                }
    });
}

namespace {

// Direct convolution over a zero-padded copy of the input. Rows along Z are the
// unit of work; every accumulation runs in a fixed order, so results are
// bit-reproducible.
struct ConvGeometry {
    std::size_t ci, co, x, y, z, k;

    std::size_t vol() const { return x * y * z; }
    std::size_t px() const { return x + k - 1; }
    std::size_t py() const { return y + k - 1; }
    std::size_t pz() const { return z + k - 1; }
    std::size_t pvol() const { return px() * py() * pz(); }
    std::size_t taps() const { return k * k * k; }
    // Start of padded row (ch, i, j).
    std::size_t prow(std::size_t ch, std::size_t i, std::size_t j) const {
        return ((ch * px() + i) * py() + j) * pz();
    }
    std::size_t row(std::size_t ch, std::size_t i, std::size_t j) const {
        return ((ch * x + i) * y + j) * z;
    }
};

std::vector<double> pad_volume(const ConvGeometry& g, std::span<const double> in) {
    const std::size_t h = g.k / 2;
    std::vector<double> padded(g.ci * g.pvol(), 0.0);
    for (std::size_t ch = 0; ch < g.ci; ++ch)
        for (std::size_t i = 0; i < g.x; ++i)
            for (std::size_t j = 0; j < g.y; ++j) {
                std::copy_n(in.data() + g.row(ch, i, j), g.z, padded.data() + g.prow(ch, i + h, j + h) + h);
            }
    return padded;
}

// acc[t] += sum_c w[c] * src[t + c]
inline void row_correlate(double* __restrict acc, const double* __restrict src,
                          const double* __restrict w, std::size_t k, std::size_t n) {
    if (k == 3) {
        const double w0 = w[0], w1 = w[1], w2 = w[2];
        for (std::size_t t = 0; t < n; ++t) acc[t] += w0 * src[t] + w1 * src[t + 1] + w2 * src[t + 2];
        return;
    }
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t t = 0; t < n; ++t) acc[t] += w[c] * src[t + c];
}

// dst[t + c] += w[c] * g[t], written in gather form over a row `gp` that carries
// k - 1 zeros on each side of g: dst[u] += sum_c w[c] * gp[u + k - 1 - c].
inline void row_scatter(double* __restrict dst, const double* __restrict gp,
                        const double* __restrict w, std::size_t k, std::size_t n) {
    const std::size_t span = n + k - 1;
    if (k == 3) {
        const double w0 = w[0], w1 = w[1], w2 = w[2];
        for (std::size_t u = 0; u < span; ++u) dst[u] += w0 * gp[u + 2] + w1 * gp[u + 1] + w2 * gp[u];
        return;
    }
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t u = 0; u < span; ++u) dst[u] += w[c] * gp[u + k - 1 - c];
}

// lanes[c * n + t] += g[t] * src[t + c]
inline void row_weight_lanes(double* __restrict lanes, const double* __restrict g,
                             const double* __restrict src, std::size_t k, std::size_t n) {
    if (k == 3) {
        double* __restrict l0 = lanes;
        double* __restrict l1 = lanes + n;
        double* __restrict l2 = lanes + 2 * n;
        for (std::size_t t = 0; t < n; ++t) {
            const double gv = g[t];
            l0[t] += gv * src[t];
            l1[t] += gv * src[t + 1];
            l2[t] += gv * src[t + 2];
        }
        return;
    }
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t t = 0; t < n; ++t) lanes[c * n + t] += g[t] * src[t + c];
}

}  // namespace

Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    const Shape& is = input.shape();
    const Shape& ws = weight.shape();
    if (is.size() != 4) shape_error("conv3d", is, "is not (C, X, Y, Z)");
    if (ws.size() != 5 || ws[1] != is[0] || ws[2] != ws[3] || ws[3] != ws[4] || ws[2] % 2 == 0) {
        shape_error("conv3d", is, ws);
    }
    if (bias.shape() != Shape{ws[0]}) shape_error("conv3d", ws, bias.shape());

    const ConvGeometry g{is[0], ws[0], is[1], is[2], is[3], ws[2]};
    auto padded = std::make_shared<const std::vector<double>>(pad_volume(g, input.values()));
    const double* pin = padded->data();
    const auto w = weight.values();
    const auto bv = bias.values();

    std::vector<double> out(g.co * g.vol());
    for (std::size_t o = 0; o < g.co; ++o)
        for (std::size_t i = 0; i < g.x; ++i)
            for (std::size_t j = 0; j < g.y; ++j) {
                double* acc = out.data() + g.row(o, i, j);
                std::fill(acc, acc + g.z, bv[o]);
                const double* wk = w.data() + o * g.ci * g.taps();
                for (std::size_t ch = 0; ch < g.ci; ++ch)
                    for (std::size_t a = 0; a < g.k; ++a)
                        for (std::size_t b = 0; b < g.k; ++b, wk += g.k) {
                            row_correlate(acc, pin + g.prow(ch, i + a, j + b), wk, g.k, g.z);
                        }
            }

    DataPtr pi = input.impl(), pw = weight.impl(), pb = bias.impl();
    return Tensor::make_result({g.co, g.x, g.y, g.z}, std::move(out), "conv3d", {input, weight, bias},
                               [pi, pw, pb, g, padded](const TensorData& res) {
        const double* gout = res.grad.data();
        const std::size_t h = g.k / 2;

        if (pb->requires_grad) {
            for (std::size_t o = 0; o < g.co; ++o) {
                double acc = 0.0;
                for (std::size_t t = 0; t < g.vol(); ++t) acc += gout[o * g.vol() + t];
                pb->grad[o] += acc;
            }
        }

        if (pw->requires_grad) {
            // Per-lane partial sums over all rows, reduced once per weight.
            std::vector<double> lanes(g.k * g.z);
            for (std::size_t o = 0; o < g.co; ++o)
                for (std::size_t ch = 0; ch < g.ci; ++ch)
                    for (std::size_t a = 0; a < g.k; ++a)
                        for (std::size_t b = 0; b < g.k; ++b) {
                            std::fill(lanes.begin(), lanes.end(), 0.0);
                            for (std::size_t i = 0; i < g.x; ++i)
                                for (std::size_t j = 0; j < g.y; ++j) {
                                    const double* go = gout + g.row(o, i, j);
                                    row_weight_lanes(lanes.data(), go, padded->data() + g.prow(ch, i + a, j + b),
                                                     g.k, g.z);
                                }
                            double* gw = pw->grad.data() + (((o * g.ci + ch) * g.k + a) * g.k + b) * g.k;
                            for (std::size_t c = 0; c < g.k; ++c) {
                                double acc = 0.0;
                                for (std::size_t t = 0; t < g.z; ++t) acc += lanes[c * g.z + t];
                                gw[c] += acc;
                            }
                        }
        }

        if (pi->requires_grad) {
            // Scatter into a padded gradient volume, then crop.
            const std::size_t gz = g.z + 2 * (g.k - 1);
            std::vector<double> grows(g.co * g.x * g.y * gz, 0.0);
            for (std::size_t r = 0; r < g.co * g.x * g.y; ++r) {
                std::copy_n(gout + r * g.z, g.z, grows.data() + r * gz + g.k - 1);
            }
            std::vector<double> gpad(g.ci * g.pvol(), 0.0);
            for (std::size_t o = 0; o < g.co; ++o)
                for (std::size_t i = 0; i < g.x; ++i)
                    for (std::size_t j = 0; j < g.y; ++j) {
                        const double* go = grows.data() + ((o * g.x + i) * g.y + j) * gz;
                        const double* wk = pw->value.data() + o * g.ci * g.taps();
                        for (std::size_t ch = 0; ch < g.ci; ++ch)
                            for (std::size_t a = 0; a < g.k; ++a)
                                for (std::size_t b = 0; b < g.k; ++b, wk += g.k) {
                                    row_scatter(gpad.data() + g.prow(ch, i + a, j + b), go, wk, g.k, g.z);
                                }
                    }
            for (std::size_t ch = 0; ch < g.ci; ++ch)
                for (std::size_t i = 0; i < g.x; ++i)
                    for (std::size_t j = 0; j < g.y; ++j) {
                        double* dst = pi->grad.data() + g.row(ch, i, j);
                        const double* src = gpad.data() + g.prow(ch, i + h, j + h) + h;
                        for (std::size_t t = 0; t < g.z; ++t) dst[t] += src[t];
                    }
        }
    });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    DataPtr pa = a.impl();
    return Tensor::make_result({1}, {acc}, "sum", {a}, [pa](const TensorData& o) {
        for (double& g : pa->grad) g += o.grad[0];
    });
}

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel() || a.shape() != b.shape()) shape_error("dot", a.shape(), b.shape());
    const auto av = a.values();
    const auto bv = b.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) acc += av[i] * bv[i];
    DataPtr pa = a.impl(), pb = b.impl();
    return Tensor::make_result({1}, {acc}, "dot", {a, b}, [pa, pb](const TensorData& o) {
        const double g = o.grad[0];
        // pa and pb may alias (dot(x, x)); each side contributes once.
        if (pa->requires_grad)
            for (std::size_t i = 0; i < pa->grad.size(); ++i) pa->grad[i] += g * pb->value[i];
        if (pb->requires_grad)
            for (std::size_t i = 0; i < pb->grad.size(); ++i) pb->grad[i] += g * pa->value[i];
    });
}

}  // namespace neuroloc::ad
