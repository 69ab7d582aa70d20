#pragma once

// Dense f64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle. Operations on tensors that require gradients record a
// backward node; calling backward() on a scalar result walks the recorded graph once
// in reverse topological order and accumulates gradients into every reachable tensor
// that requires them. The graph is released afterwards. Leaf gradients must be reset
// with zero_grad() before the next backward() that reaches them.
//
// Volumes use channel-major layout (C, X, Y, Z) with Z contiguous.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace neuroloc::ad {

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t numel(const Shape& shape);

struct Node;

struct TensorData {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until a backward pass reaches the tensor
    bool requires_grad = false;
    bool grad_pending = false;  // leaf holds gradients from a previous backward
    bool consumed = false;      // backward() already ran from this tensor
    std::shared_ptr<Node> node;
};

struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorData>> inputs;
    // Reads out.grad and accumulates into inputs[i]->grad (already allocated).
    std::function<void(const TensorData& out)> backward;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return data_ != nullptr; }
    const Shape& shape() const;
    std::size_t numel() const;
    bool requires_grad() const;

    std::span<const double> values() const;
    /// Mutable access for optimizers. Only valid on leaves.
    std::span<double> mutable_values();
    std::span<const double> grad() const;
    bool has_grad() const;
    double item() const;

    void zero_grad();
    void backward();

    /// Builds a result tensor; records `op` when any input requires gradients.
    static Tensor make_result(Shape shape, std::vector<double> values, std::string op,
                              std::vector<Tensor> inputs,
                              std::function<void(const TensorData& out)> backward);

    const std::shared_ptr<TensorData>& impl() const { return data_; }

private:
    explicit Tensor(std::shared_ptr<TensorData> data) : data_(std::move(data)) {}
    std::shared_ptr<TensorData> data_;
};

// Elementwise; `b` may also be a one-element tensor broadcast over `a`.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

/// (m, n) x (n) -> (m) or (m, n) x (n, p) -> (m, p).
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batchless dense layer: weight (out, in), input (in), bias (out).
Tensor linear(const Tensor& weight, const Tensor& input, const Tensor& bias);

Tensor reshape(const Tensor& a, const Shape& shape);
/// Rectangular sub-block starting at `start` with extents `size`.
Tensor slice(const Tensor& a, const Shape& start, const Shape& size);
/// Flat 1-D result: out[i] = a.flat[indices[i]].
Tensor gather(const Tensor& a, std::vector<std::size_t> indices);

Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double negative_slope);
Tensor tanh(const Tensor& a);

/// (C, X, Y, Z) -> (C, f X, f Y, f Z), nearest neighbour.
Tensor upsample3d_nearest(const Tensor& a, std::size_t factor = 2);
/// Stride 1, zero padding, odd cubic kernel. input (Ci, X, Y, Z), weight
/// (Co, Ci, k, k, k), bias (Co) -> (Co, X, Y, Z).
Tensor conv3d(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor sum(const Tensor& a);
Tensor dot(const Tensor& a, const Tensor& b);

}  // namespace neuroloc::ad
