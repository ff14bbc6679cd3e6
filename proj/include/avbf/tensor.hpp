#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "avbf/error.hpp"

namespace avbf::net {

/// Dense row-major n-d array with an optional gradient buffer of the same
/// shape. The single value type flowing through the network.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> v;
    std::vector<double> g;

    Tensor() = default;
    explicit Tensor(std::vector<int> shape_in);

    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    void ensure_grad();
    void zero_grad();
};

std::int64_t shape_product(const std::vector<int>& shape);

/// Reverse-mode tape. Records operations in execution order; `backward`
/// walks the record in reverse. Parameter leaves accumulate their gradient
/// directly into the bound Tensor's `g` buffer.
///
/// Single-threaded by contract: one tape per forward/backward pass, and
/// gradient accumulation happens in recording order, which keeps training
/// bit-reproducible.
class Tape {
public:
    using NodeId = int;

    NodeId constant(std::vector<int> shape, std::span<const double> data);
    NodeId parameter(Tensor& tensor);

    const std::vector<int>& shape(NodeId id) const;
    std::span<const double> value(NodeId id) const;
    std::span<double> grad(NodeId id);
    double scalar(NodeId id) const;

    /// Seeds d(loss)/d(loss) = 1 and propagates to every leaf. `loss` must
    /// be scalar.
    void backward(NodeId loss);

    // --- operations ---

    /// Valid (no padding) 2-D convolution. input [H,W,C], kernel
    /// [kh,kw,C,F], bias [F], output [Ho,Wo,F] with Ho = (H-kh)/sh + 1.
    /// Throws InvalidArgument when the kernel does not fit in the input.
    NodeId conv2d_valid(NodeId input, NodeId kernel, NodeId bias, int stride_h, int stride_w);

    NodeId relu(NodeId x);

    /// x [n], weight [m,n], bias [m] -> [m].
    NodeId dense(NodeId x, NodeId weight, NodeId bias);

    NodeId reshape(NodeId x, std::vector<int> shape);
    NodeId concat(NodeId a, NodeId b);              // 1-d
    NodeId slice(NodeId x, int offset, int length); // 1-d
    NodeId sub(NodeId a, NodeId b);

    /// Mean squared error against a constant target. Scalar output.
    NodeId mse(NodeId x, std::span<const double> target);

    /// Scalar: sum of weight_i * scalar_node_i.
    NodeId weighted_sum(const std::vector<std::pair<NodeId, double>>& terms);

    /// Inverse of a partition: out[index_a[i]] = a[i], out[index_b[j]] = b[j].
    NodeId scatter_merge(NodeId a, NodeId b, const std::vector<int>& index_a,
                         const std::vector<int>& index_b);

    /// Custom differentiable op registered by callers (forward already done).
    /// `backward` receives (upstream grad of out, sink for parent grads).
    NodeId custom(std::vector<int> out_shape, std::vector<double> out_values,
                  std::vector<NodeId> parents,
                  std::function<void(std::span<const double>, const std::vector<std::span<double>>&)>
                      backward_fn);

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        std::vector<int> shape;
        std::vector<double> v;
        std::vector<double> g;
        Tensor* bound = nullptr;  // parameter leaves
        std::function<void(Tape&)> backward;
        std::vector<double> aux;  // op scratch kept for the backward pass
    };

    Node& node(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }
    NodeId add_node(std::vector<int> shape);
    std::span<double> values_mut(NodeId id);

    std::vector<Node> nodes_;
};

/// Max relative finite-difference error over sampled parameter entries.
struct GradCheckReport {
    double max_rel_error = 0.0;
    int entries_checked = 0;
};

/// Central-difference check of reverse-mode gradients.
///
/// `eval` must: (with_grad = true) run one forward+backward accumulating
/// gradients into the supplied tensors and return the loss; (false) return
/// the loss only. Gradients are zeroed here before the analytic pass.
/// Relative error uses max(|analytic|, |numeric|, 1e-3) as denominator so
/// vanishing gradients are compared at a fixed absolute scale.
GradCheckReport gradient_check(const std::vector<std::pair<std::string, Tensor*>>& params,
                               const std::function<double(bool with_grad)>& eval,
                               int samples_per_tensor, double epsilon, std::uint64_t seed);

}  // namespace avbf::net
