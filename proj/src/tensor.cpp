#include "avbf/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

#include "avbf/rng.hpp"

namespace avbf::net {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRowMat = Eigen::Map<RowMat>;
using MapConstRowMat = Eigen::Map<const RowMat>;

std::int64_t shape_product(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e < 0) throw InvalidArgument("negative tensor extent");
        n *= e;
    }
    return n;
}

Tensor::Tensor(std::vector<int> shape_in) : shape(std::move(shape_in)) {
    v.assign(static_cast<size_t>(shape_product(shape)), 0.0);
}

void Tensor::ensure_grad() {
    if (g.size() != v.size()) g.assign(v.size(), 0.0);
}

void Tensor::zero_grad() { g.assign(v.size(), 0.0); }

Tape::NodeId Tape::add_node(std::vector<int> shape) {
    Node n;
    n.shape = std::move(shape);
    n.v.assign(static_cast<size_t>(shape_product(n.shape)), 0.0);
    n.g.assign(n.v.size(), 0.0);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

Tape::NodeId Tape::constant(std::vector<int> shape, std::span<const double> data) {
    const NodeId id = add_node(std::move(shape));
    Node& n = node(id);
    if (data.size() != n.v.size()) throw InvalidArgument("constant: data does not match shape");
    std::copy(data.begin(), data.end(), n.v.begin());
    return id;
}

Tape::NodeId Tape::parameter(Tensor& tensor) {
    tensor.ensure_grad();
    const NodeId id = add_node(tensor.shape);
    Node& n = node(id);
    n.v = tensor.v;
    n.bound = &tensor;
    n.backward = [id](Tape& t) {
        Node& self = t.node(id);
        for (size_t i = 0; i < self.g.size(); ++i) self.bound->g[i] += self.g[i];
    };
    return id;
}

const std::vector<int>& Tape::shape(NodeId id) const { return node(id).shape; }

std::span<const double> Tape::value(NodeId id) const { return node(id).v; }

std::span<double> Tape::grad(NodeId id) { return node(id).g; }

std::span<double> Tape::values_mut(NodeId id) { return node(id).v; }

double Tape::scalar(NodeId id) const {
    if (node(id).v.size() != 1) throw InvalidArgument("scalar: node is not a scalar");
    return node(id).v[0];
}

void Tape::backward(NodeId loss) {
    if (node(loss).v.size() != 1) throw InvalidArgument("backward: loss must be a scalar");
    node(loss).g[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = node(id);
        if (n.backward) n.backward(*this);
    }
}

Tape::NodeId Tape::conv2d_valid(NodeId input, NodeId kernel, NodeId bias, int stride_h,
                                int stride_w) {
    const auto& xs = shape(input);
    const auto& ks = shape(kernel);
    if (xs.size() != 3 || ks.size() != 4) throw InvalidArgument("conv2d: input must be HxWxC, kernel khxkwxCxF");
    const int h = xs[0], w = xs[1], c = xs[2];
    const int kh = ks[0], kw = ks[1], kc = ks[2], f = ks[3];
    if (kc != c) throw InvalidArgument("conv2d: channel mismatch");
    if (kh > h || kw > w)
        throw InvalidArgument("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                              " larger than input " + std::to_string(h) + "x" + std::to_string(w));
    if (stride_h < 1 || stride_w < 1) throw InvalidArgument("conv2d: stride must be positive");
    if (shape(bias) != std::vector<int>{f}) throw InvalidArgument("conv2d: bias must have F entries");

    const int ho = (h - kh) / stride_h + 1;
    const int wo = (w - kw) / stride_w + 1;
    const int patch = kh * kw * c;

    const NodeId id = add_node({ho, wo, f});
    Node& n = node(id);

    // im2col: one row per output pixel, then a single GEMM against the kernel.
    n.aux.assign(static_cast<size_t>(ho) * wo * patch, 0.0);
    {
        const auto x = value(input);
        double* col = n.aux.data();
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const int iy = oy * stride_h;
                const int ix = ox * stride_w;
                for (int ky = 0; ky < kh; ++ky) {
                    const double* src = &x[((iy + ky) * static_cast<std::int64_t>(w) + ix) * c];
                    std::copy(src, src + static_cast<std::int64_t>(kw) * c, col);
                    col += kw * c;
                }
            }
        }
        MapConstRowMat colm(n.aux.data(), static_cast<Eigen::Index>(ho) * wo, patch);
        MapConstRowMat km(value(kernel).data(), patch, f);
        MapRowMat out(n.v.data(), static_cast<Eigen::Index>(ho) * wo, f);
        out.noalias() = colm * km;
        const auto b = value(bias);
        for (Eigen::Index r = 0; r < out.rows(); ++r)
            for (int j = 0; j < f; ++j) out(r, j) += b[static_cast<size_t>(j)];
    }

    n.backward = [id, input, kernel, bias, h, w, c, kh, kw, f, ho, wo, patch, stride_h,
                  stride_w](Tape& t) {
        Node& self = t.node(id);
        MapConstRowMat dout(self.g.data(), static_cast<Eigen::Index>(ho) * wo, f);
        MapConstRowMat colm(self.aux.data(), static_cast<Eigen::Index>(ho) * wo, patch);

        MapRowMat dkernel(t.grad(kernel).data(), patch, f);
        dkernel.noalias() += colm.transpose() * dout;

        auto dbias = t.grad(bias);
        for (Eigen::Index r = 0; r < dout.rows(); ++r)
            for (int j = 0; j < f; ++j) dbias[static_cast<size_t>(j)] += dout(r, j);

        MapConstRowMat km(t.value(kernel).data(), patch, f);
        RowMat dcol = dout * km.transpose();  // (ho*wo) x patch

        auto dx = t.grad(input);
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                const int iy = oy * stride_h;
                const int ix = ox * stride_w;
                const double* src = dcol.data() + (static_cast<std::int64_t>(oy) * wo + ox) * patch;
                for (int ky = 0; ky < kh; ++ky) {
                    double* dst = &dx[((iy + ky) * static_cast<std::int64_t>(w) + ix) * c];
                    const double* row = src + static_cast<std::int64_t>(ky) * kw * c;
                    for (int i = 0; i < kw * c; ++i) dst[i] += row[i];
                }
            }
        }
    };
    return id;
}

Tape::NodeId Tape::relu(NodeId x) {
    const NodeId id = add_node(shape(x));
    Node& n = node(id);
    const auto xv = value(x);
    for (size_t i = 0; i < n.v.size(); ++i) n.v[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    n.backward = [id, x](Tape& t) {
        Node& self = t.node(id);
        const auto xv = t.value(x);
        auto dx = t.grad(x);
        for (size_t i = 0; i < self.g.size(); ++i)
            if (xv[i] > 0.0) dx[i] += self.g[i];
    };
    return id;
}

Tape::NodeId Tape::dense(NodeId x, NodeId weight, NodeId bias) {
    const auto& xs = shape(x);
    const auto& ws = shape(weight);
    if (xs.size() != 1 || ws.size() != 2) throw InvalidArgument("dense: expect vector input, 2-d weight");
    const int in = xs[0], out = ws[0];
    if (ws[1] != in) throw InvalidArgument("dense: weight columns must match input length");
    if (shape(bias) != std::vector<int>{out}) throw InvalidArgument("dense: bias length mismatch");

    const NodeId id = add_node({out});
    Node& n = node(id);
    {
        MapConstRowMat wm(value(weight).data(), out, in);
        Eigen::Map<const Eigen::VectorXd> xv(value(x).data(), in);
        Eigen::Map<const Eigen::VectorXd> bv(value(bias).data(), out);
        Eigen::Map<Eigen::VectorXd> ov(n.v.data(), out);
        ov.noalias() = wm * xv + bv;
    }
    n.backward = [id, x, weight, bias, in, out](Tape& t) {
        Node& self = t.node(id);
        Eigen::Map<const Eigen::VectorXd> dout(self.g.data(), out);
        Eigen::Map<const Eigen::VectorXd> xv(t.value(x).data(), in);
        MapConstRowMat wm(t.value(weight).data(), out, in);

        MapRowMat dw(t.grad(weight).data(), out, in);
        dw.noalias() += dout * xv.transpose();
        Eigen::Map<Eigen::VectorXd> db(t.grad(bias).data(), out);
        db.noalias() += dout;
        Eigen::Map<Eigen::VectorXd> dx(t.grad(x).data(), in);
        dx.noalias() += wm.transpose() * dout;
    };
    return id;
}

Tape::NodeId Tape::reshape(NodeId x, std::vector<int> new_shape) {
    if (shape_product(new_shape) != shape_product(shape(x)))
        throw InvalidArgument("reshape: element count mismatch");
    const NodeId id = add_node(std::move(new_shape));
    Node& n = node(id);
    const auto xv = value(x);
    std::copy(xv.begin(), xv.end(), n.v.begin());
    n.backward = [id, x](Tape& t) {
        Node& self = t.node(id);
        auto dx = t.grad(x);
        for (size_t i = 0; i < self.g.size(); ++i) dx[i] += self.g[i];
    };
    return id;
}

Tape::NodeId Tape::concat(NodeId a, NodeId b) {
    if (shape(a).size() != 1 || shape(b).size() != 1)
        throw InvalidArgument("concat: vectors only");
    const int na = shape(a)[0], nb = shape(b)[0];
    const NodeId id = add_node({na + nb});
    Node& n = node(id);
    const auto av = value(a);
    const auto bv = value(b);
    std::copy(av.begin(), av.end(), n.v.begin());
    std::copy(bv.begin(), bv.end(), n.v.begin() + na);
    n.backward = [id, a, b, na, nb](Tape& t) {
        Node& self = t.node(id);
        auto da = t.grad(a);
        auto db = t.grad(b);
        for (int i = 0; i < na; ++i) da[static_cast<size_t>(i)] += self.g[static_cast<size_t>(i)];
        for (int i = 0; i < nb; ++i) db[static_cast<size_t>(i)] += self.g[static_cast<size_t>(na + i)];
    };
    return id;
}

Tape::NodeId Tape::slice(NodeId x, int offset, int length) {
    if (shape(x).size() != 1) throw InvalidArgument("slice: vectors only");
    if (offset < 0 || length < 0 || offset + length > shape(x)[0])
        throw InvalidArgument("slice: range out of bounds");
    const NodeId id = add_node({length});
    Node& n = node(id);
    const auto xv = value(x);
    std::copy(xv.begin() + offset, xv.begin() + offset + length, n.v.begin());
    n.backward = [id, x, offset, length](Tape& t) {
        Node& self = t.node(id);
        auto dx = t.grad(x);
        for (int i = 0; i < length; ++i)
            dx[static_cast<size_t>(offset + i)] += self.g[static_cast<size_t>(i)];
    };
    return id;
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
    if (shape(a) != shape(b)) throw InvalidArgument("sub: shape mismatch");
    const NodeId id = add_node(shape(a));
    Node& n = node(id);
    const auto av = value(a);
    const auto bv = value(b);
    for (size_t i = 0; i < n.v.size(); ++i) n.v[i] = av[i] - bv[i];
    n.backward = [id, a, b](Tape& t) {
        Node& self = t.node(id);
        auto da = t.grad(a);
        auto db = t.grad(b);
        for (size_t i = 0; i < self.g.size(); ++i) {
            da[i] += self.g[i];
            db[i] -= self.g[i];
        }
    };
    return id;
}

Tape::NodeId Tape::mse(NodeId x, std::span<const double> target) {
    const auto xv = value(x);
    if (xv.size() != target.size()) throw InvalidArgument("mse: target size mismatch");
    if (target.empty()) throw InvalidArgument("mse: empty target");
    const NodeId id = add_node({});
    Node& n = node(id);
    n.aux.assign(target.begin(), target.end());
    double sum = 0.0;
    for (size_t i = 0; i < xv.size(); ++i) {
        const double d = xv[i] - target[i];
        sum += d * d;
    }
    n.v[0] = sum / static_cast<double>(xv.size());
    n.backward = [id, x](Tape& t) {
        Node& self = t.node(id);
        const auto xv = t.value(x);
        auto dx = t.grad(x);
        const double scale = 2.0 * self.g[0] / static_cast<double>(xv.size());
        for (size_t i = 0; i < xv.size(); ++i) dx[i] += scale * (xv[i] - self.aux[i]);
    };
    return id;
}

Tape::NodeId Tape::weighted_sum(const std::vector<std::pair<NodeId, double>>& terms) {
    const NodeId id = add_node({});
    Node& n = node(id);
    double sum = 0.0;
    for (const auto& [tid, w] : terms) {
        if (node(tid).v.size() != 1) throw InvalidArgument("weighted_sum: terms must be scalars");
        sum += w * node(tid).v[0];
    }
    n.v[0] = sum;
    auto captured = terms;
    n.backward = [id, captured](Tape& t) {
        Node& self = t.node(id);
        for (const auto& [tid, w] : captured) t.grad(tid)[0] += w * self.g[0];
    };
    return id;
}

Tape::NodeId Tape::scatter_merge(NodeId a, NodeId b, const std::vector<int>& index_a,
                                 const std::vector<int>& index_b) {
    if (shape(a).size() != 1 || shape(b).size() != 1)
        throw InvalidArgument("scatter_merge: vectors only");
    const int na = shape(a)[0], nb = shape(b)[0];
    if (static_cast<size_t>(na) != index_a.size() || static_cast<size_t>(nb) != index_b.size())
        throw InvalidArgument("scatter_merge: index count mismatch");
    const int total = na + nb;
    const NodeId id = add_node({total});
    Node& n = node(id);
    const auto av = value(a);
    const auto bv = value(b);
    std::vector<bool> seen(static_cast<size_t>(total), false);
    auto place = [&](int dst, double val) {
        if (dst < 0 || dst >= total || seen[static_cast<size_t>(dst)])
            throw InvalidArgument("scatter_merge: indices must form a permutation");
        seen[static_cast<size_t>(dst)] = true;
        n.v[static_cast<size_t>(dst)] = val;
    };
    for (int i = 0; i < na; ++i) place(index_a[static_cast<size_t>(i)], av[static_cast<size_t>(i)]);
    for (int i = 0; i < nb; ++i) place(index_b[static_cast<size_t>(i)], bv[static_cast<size_t>(i)]);
    auto ia = index_a;
    auto ib = index_b;
    n.backward = [id, a, b, ia, ib](Tape& t) {
        Node& self = t.node(id);
        auto da = t.grad(a);
        auto db = t.grad(b);
        for (size_t i = 0; i < ia.size(); ++i) da[i] += self.g[static_cast<size_t>(ia[i])];
        for (size_t i = 0; i < ib.size(); ++i) db[i] += self.g[static_cast<size_t>(ib[i])];
    };
    return id;
}

Tape::NodeId Tape::custom(
    std::vector<int> out_shape, std::vector<double> out_values, std::vector<NodeId> parents,
    std::function<void(std::span<const double>, const std::vector<std::span<double>>&)> backward_fn) {
    const NodeId id = add_node(std::move(out_shape));
    Node& n = node(id);
    if (out_values.size() != n.v.size()) throw InvalidArgument("custom: value/shape mismatch");
    n.v = std::move(out_values);
    n.backward = [id, parents, backward_fn](Tape& t) {
        Node& self = t.node(id);
        std::vector<std::span<double>> parent_grads;
        parent_grads.reserve(parents.size());
        for (NodeId p : parents) parent_grads.push_back(t.grad(p));
        backward_fn(self.g, parent_grads);
    };
    return id;
}

GradCheckReport gradient_check(const std::vector<std::pair<std::string, Tensor*>>& params,
                               const std::function<double(bool with_grad)>& eval,
                               int samples_per_tensor, double epsilon, std::uint64_t seed) {
    for (const auto& [name, t] : params) t->zero_grad();
    eval(true);

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& [name, t] : params) analytic.push_back(t->g);

    Rng rng(seed);
    GradCheckReport report;
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor* t = params[pi].second;
        const std::int64_t n = t->size();
        const int samples = static_cast<int>(std::min<std::int64_t>(n, samples_per_tensor));
        for (int s = 0; s < samples; ++s) {
            const auto idx = static_cast<size_t>(rng.uniform_index(static_cast<std::uint64_t>(n)));
            const double saved = t->v[idx];
            t->v[idx] = saved + epsilon;
            const double up = eval(false);
            t->v[idx] = saved - epsilon;
            const double down = eval(false);
            t->v[idx] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double a = analytic[pi][idx];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
            report.max_rel_error = std::max(report.max_rel_error, std::abs(a - numeric) / denom);
            ++report.entries_checked;
        }
    }
    return report;
}

}  // namespace avbf::net
