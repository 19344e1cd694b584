#pragma once

#include "zecon/tensor.hpp"

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

/// Minimal reverse-mode automatic differentiation over `Tensor`.
///
/// Graphs are built dynamically: every op returns a `Var` that keeps its
/// parents alive and knows how to push its gradient back to them. Leaves
/// created with `Var::parameter` accumulate gradients; constants do not and
/// ops whose inputs are all constant record nothing.
namespace zecon::ad {

struct Node;

class Var {
public:
    Var() = default;

    static Var constant(Tensor value);
    static Var parameter(Tensor value);

    const Tensor& value() const;
    /// Gradient accumulated by the last `backward`; zeros if none reached it.
    Tensor grad() const;
    bool requires_grad() const;
    bool defined() const { return node_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return value().shape(); }

    void zero_grad();
    /// Turns a leaf into a trainable parameter (or freezes it).
    void set_requires_grad(bool on);
    /// Overwrite the stored value (used by optimizers on parameters).
    void assign(Tensor value);

    std::shared_ptr<Node> node() const { return node_; }
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

private:
    std::shared_ptr<Node> node_;
};

/// Vector-Jacobian product: given d(loss)/d(output), return one gradient per input.
using VjpFn = std::function<std::vector<Tensor>(const Tensor& grad_out)>;

/// Wraps an externally computed op. `vjp` is only called for graphs that need gradients.
Var custom(const std::vector<Var>& inputs, Tensor value, VjpFn vjp);

/// Seeds d(root)/d(root) = 1 for a scalar root and propagates to every parameter.
void backward(const Var& root);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var sum(const Var& a);
Var mean(const Var& a);
Var mse(const Var& a, const Var& b);
Var silu(const Var& a);
Var reshape(const Var& a, std::vector<std::size_t> shape);
/// Contiguous flat range [offset, offset + numel(shape)) of `a`, reshaped.
Var slice(const Var& a, std::size_t offset, std::vector<std::size_t> shape);

/// x: [C,H,W], weight: [O,C,k,k], bias: [O] -> [O,H',W'] with zero padding.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);
/// Nearest-neighbour 2x upsampling of [C,H,W].
Var upsample2x(const Var& x);
/// Adds bias[c] to every pixel of channel c of a [C,H,W] tensor.
Var add_channel_bias(const Var& x, const Var& bias);
/// W: [M,N] times x: [N] -> [M].
Var matvec(const Var& w, const Var& x);
/// L2-normalises each row of a [P,D] tensor (rank-1 input is a single row).
Var normalize_rows(const Var& x, double eps = 0.0);
/// Row-wise dot products of two [P,D] tensors -> [P].
Var row_dot(const Var& a, const Var& b);

/// Gathers the feature vectors at flat spatial positions of a [C,H,W] map -> [P,C].
Var gather_positions(const Var& x, const std::vector<std::size_t>& positions);

/// Sum over rows i of -log softmax_j(q_i . k_j / tau)[i]. Row i of `keys`
/// is the positive for query i; every other row is a negative.
Var patch_nce(const Var& queries, const Var& keys, double tau);

/// Sparse bilinear resampling map from an [H,W] plane to an [OH,OW] plane.
struct SampleMap {
    std::size_t in_h = 0, in_w = 0, out_h = 0, out_w = 0;
    /// Four taps per output pixel; weight 0 for taps outside the source.
    std::vector<std::uint32_t> index;
    std::vector<double> weight;

    /// Bilinear lookup at source coordinates (pixel centres at integer + 0.5).
    static SampleMap from_coords(std::size_t in_h, std::size_t in_w, std::size_t out_h,
                                 std::size_t out_w, const std::vector<double>& src_x,
                                 const std::vector<double>& src_y);
    /// Plain bilinear resize (align_corners = false).
    static SampleMap resize(std::size_t in_h, std::size_t in_w, std::size_t out_h,
                            std::size_t out_w);
};

/// Applies `map` to every channel of a [C,H,W] tensor.
Var resample(const Var& x, const SampleMap& map);
Tensor resample(const Tensor& x, const SampleMap& map);

} // namespace zecon::ad
