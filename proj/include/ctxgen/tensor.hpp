#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ctxgen/real.hpp"
#include "ctxgen/rng.hpp"

namespace ctxgen {

/// Dense row-major tensor with reverse-mode autodiff. A Tensor is a cheap
/// handle onto a shared node; ops record a backprop closure onto the result
/// node whenever any operand requires gradients. Gradients accumulate
/// (add-into) on leaves until zero_grad() is called.
class Tensor {
public:
    struct Node {
        std::vector<int> shape;
        std::vector<real> values;
        std::vector<real> grad;  // empty until first needed
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backprop;
    };

    Tensor() : node_(std::make_shared<Node>()) {}

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->values.assign(static_cast<std::size_t>(numel(t.node_->shape)), real(0));
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(std::vector<int> shape, real value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.values().begin(), t.values().end(), value);
        return t;
    }

    static Tensor from_values(std::vector<int> shape, std::vector<real> values,
                              bool requires_grad = false) {
        if (numel(shape) != static_cast<std::int64_t>(values.size())) {
            throw std::invalid_argument("Tensor: shape does not match value count");
        }
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->values = std::move(values);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(real value) { return from_values({1}, {value}); }

    static Tensor randn(std::vector<int> shape, Rng& rng, real stddev,
                        bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.values()) {
            v = rng.normal(real(0), stddev);
        }
        return t;
    }

    const std::vector<int>& shape() const { return node_->shape; }
    std::int64_t size() const { return numel(node_->shape); }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    int rows() const {
        require_matrix_("rows");
        return node_->shape[0];
    }
    int cols() const {
        require_matrix_("cols");
        return node_->shape[1];
    }

    std::vector<real>& values() { return node_->values; }
    const std::vector<real>& values() const { return node_->values; }

    real at(int r, int c) const {
        require_matrix_("at");
        return node_->values[static_cast<std::size_t>(r) * node_->shape[1] + c];
    }

    real item() const {
        if (size() != 1) {
            throw std::invalid_argument("Tensor::item: tensor is not a scalar");
        }
        return node_->values[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::vector<real>& grad() {
        ensure_grad(*node_);
        return node_->grad;
    }
    const std::vector<real>& grad() const {
        ensure_grad(*node_);
        return node_->grad;
    }

    void zero_grad() {
        if (!node_->grad.empty()) {
            std::fill(node_->grad.begin(), node_->grad.end(), real(0));
        }
    }

    /// Reverse-mode pass from a scalar. Leaf gradients accumulate across
    /// repeated calls; interior gradients are reset per pass.
    void backward() const {
        if (size() != 1) {
            throw std::invalid_argument("backward: loss must be a scalar");
        }
        std::vector<Node*> order = topo_order_(node_.get());
        for (Node* n : order) {
            if (n->backprop && n != node_.get()) {
                ensure_grad(*n);
                std::fill(n->grad.begin(), n->grad.end(), real(0));
            }
        }
        ensure_grad(*node_);
        if (node_->backprop) {
            node_->grad[0] = real(1);
        } else {
            node_->grad[0] += real(1);  // backward directly on a leaf
        }
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backprop) {
                n->backprop(*n);
            }
        }
    }

    /// Drops the recorded graph below this tensor, keeping values/grads.
    void detach() {
        node_->parents.clear();
        node_->backprop = nullptr;
    }

    std::shared_ptr<Node> node() const { return node_; }

    static std::int64_t numel(const std::vector<int>& shape) {
        std::int64_t n = 1;
        for (int d : shape) {
            if (d <= 0) {
                throw std::invalid_argument("Tensor: nonpositive dimension");
            }
            n *= d;
        }
        return n;
    }

    static void ensure_grad(Node& n) {
        if (n.grad.empty()) {
            n.grad.assign(n.values.size(), real(0));
        }
    }

private:
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    void require_matrix_(const char* what) const {
        if (node_->shape.size() != 2) {
            throw std::invalid_argument(std::string("Tensor::") + what +
                                        ": tensor is not 2-D");
        }
    }

    static std::vector<Node*> topo_order_(Node* root) {
        std::vector<Node*> order;
        std::unordered_set<Node*> visited;
        // Iterative DFS; recorded graphs can be deep for long sequences.
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(root, 0);
        visited.insert(root);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node* parent = node->parents[next].get();
                ++next;
                if (visited.insert(parent).second) {
                    stack.emplace_back(parent, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
        return order;
    }

    friend Tensor make_op(std::vector<int>, std::vector<real>, std::vector<Tensor>,
                          std::function<void(Tensor::Node&)>);

    std::shared_ptr<Node> node_;
};

/// Builds an op result. The graph edge is recorded only when some operand
/// requires gradients; otherwise the result is a plain value.
inline Tensor make_op(std::vector<int> shape, std::vector<real> values,
                      std::vector<Tensor> parents,
                      std::function<void(Tensor::Node&)> backprop) {
    Tensor out = Tensor::from_values(std::move(shape), std::move(values));
    bool needs = false;
    for (const Tensor& p : parents) {
        needs = needs || p.requires_grad();
    }
    if (needs) {
        out.node_->requires_grad = true;
        out.node_->parents.reserve(parents.size());
        for (const Tensor& p : parents) {
            out.node_->parents.push_back(p.node());
        }
        out.node_->backprop = std::move(backprop);
    }
    return out;
}

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
}

/// Stable softmax of one contiguous row, written into out.
inline void softmax_row(const real* x, real* out, int n) {
    real mx = x[0];
    for (int i = 1; i < n; ++i) {
        mx = std::max(mx, x[i]);
    }
    real sum = real(0);
    for (int i = 0; i < n; ++i) {
        out[i] = std::exp(x[i] - mx);
        sum += out[i];
    }
    const real inv = real(1) / sum;
    for (int i = 0; i < n; ++i) {
        out[i] *= inv;
    }
}

inline real logsumexp_row(const real* x, int n) {
    real mx = x[0];
    for (int i = 1; i < n; ++i) {
        mx = std::max(mx, x[i]);
    }
    real sum = real(0);
    for (int i = 0; i < n; ++i) {
        sum += std::exp(x[i] - mx);
    }
    return mx + std::log(sum);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise and broadcast ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<real> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] + b.values()[i];
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](Tensor::Node& self) {
        if (an->requires_grad) {
            Tensor::ensure_grad(*an);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                an->grad[i] += self.grad[i];
            }
        }
        if (bn->requires_grad) {
            Tensor::ensure_grad(*bn);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                bn->grad[i] += self.grad[i];
            }
        }
    });
}

/// Row-broadcast bias add: (m x n) + (n).
inline Tensor add_bias(const Tensor& a, const Tensor& bias) {
    if (a.ndim() != 2 || bias.ndim() != 1 || bias.shape()[0] != a.cols()) {
        throw std::invalid_argument("add_bias: expected (m x n) and (n)");
    }
    const int m = a.rows(), n = a.cols();
    std::vector<real> out(a.values().size());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            out[static_cast<std::size_t>(i) * n + j] =
                a.values()[static_cast<std::size_t>(i) * n + j] + bias.values()[j];
        }
    }
    auto an = a.node();
    auto bn = bias.node();
    return make_op(a.shape(), std::move(out), {a, bias},
                   [an, bn, m, n](Tensor::Node& self) {
                       if (an->requires_grad) {
                           Tensor::ensure_grad(*an);
                           for (std::size_t i = 0; i < self.grad.size(); ++i) {
                               an->grad[i] += self.grad[i];
                           }
                       }
                       if (bn->requires_grad) {
                           Tensor::ensure_grad(*bn);
                           for (int i = 0; i < m; ++i) {
                               for (int j = 0; j < n; ++j) {
                                   bn->grad[j] +=
                                       self.grad[static_cast<std::size_t>(i) * n + j];
                               }
                           }
                       }
                   });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<real> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] * b.values()[i];
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn](Tensor::Node& self) {
        if (an->requires_grad) {
            Tensor::ensure_grad(*an);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                an->grad[i] += self.grad[i] * bn->values[i];
            }
        }
        if (bn->requires_grad) {
            Tensor::ensure_grad(*bn);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                bn->grad[i] += self.grad[i] * an->values[i];
            }
        }
    });
}

inline Tensor scale(const Tensor& a, real c) {
    std::vector<real> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = a.values()[i] * c;
    }
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an, c](Tensor::Node& self) {
        if (an->requires_grad) {
            Tensor::ensure_grad(*an);
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                an->grad[i] += self.grad[i] * c;
            }
        }
    });
}

inline Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt_2pi = 0.3989422804014326779;
    std::vector<real> out(a.values().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = static_cast<double>(a.values()[i]);
        out[i] = static_cast<real>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
    }
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an](Tensor::Node& self) {
        if (!an->requires_grad) {
            return;
        }
        Tensor::ensure_grad(*an);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double x = static_cast<double>(an->values[i]);
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
            an->grad[i] += self.grad[i] * static_cast<real>(cdf + x * pdf);
        }
    });
}

// ---------------------------------------------------------------------------
// matrix ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
        throw std::invalid_argument("matmul: incompatible shapes");
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<real> out(static_cast<std::size_t>(m) * n, real(0));
    const real* av = a.values().data();
    const real* bv = b.values().data();
    for (int i = 0; i < m; ++i) {
        for (int p = 0; p < k; ++p) {
            const real aip = av[static_cast<std::size_t>(i) * k + p];
            real* orow = out.data() + static_cast<std::size_t>(i) * n;
            const real* brow = bv + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) {
                orow[j] += aip * brow[j];
            }
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op({m, n}, std::move(out), {a, b},
                   [an, bn, m, k, n](Tensor::Node& self) {
                       const real* g = self.grad.data();
                       if (an->requires_grad) {
                           Tensor::ensure_grad(*an);
                           // dA = G . B^T
                           for (int i = 0; i < m; ++i) {
                               for (int p = 0; p < k; ++p) {
                                   real acc = real(0);
                                   const real* grow = g + static_cast<std::size_t>(i) * n;
                                   const real* brow =
                                       bn->values.data() + static_cast<std::size_t>(p) * n;
                                   for (int j = 0; j < n; ++j) {
                                       acc += grow[j] * brow[j];
                                   }
                                   an->grad[static_cast<std::size_t>(i) * k + p] += acc;
                               }
                           }
                       }
                       if (bn->requires_grad) {
                           Tensor::ensure_grad(*bn);
                           // dB = A^T . G
                           for (int i = 0; i < m; ++i) {
                               const real* arow =
                                   an->values.data() + static_cast<std::size_t>(i) * k;
                               const real* grow = g + static_cast<std::size_t>(i) * n;
                               for (int p = 0; p < k; ++p) {
                                   const real aip = arow[p];
                                   real* brow =
                                       bn->grad.data() + static_cast<std::size_t>(p) * n;
                                   for (int j = 0; j < n; ++j) {
                                       brow[j] += aip * grow[j];
                                   }
                               }
                           }
                       }
                   });
}

inline Tensor transpose(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    std::vector<real> out(a.values().size());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            out[static_cast<std::size_t>(j) * m + i] =
                a.values()[static_cast<std::size_t>(i) * n + j];
        }
    }
    auto an = a.node();
    return make_op({n, m}, std::move(out), {a}, [an, m, n](Tensor::Node& self) {
        if (!an->requires_grad) {
            return;
        }
        Tensor::ensure_grad(*an);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                an->grad[static_cast<std::size_t>(i) * n + j] +=
                    self.grad[static_cast<std::size_t>(j) * m + i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// gather / reshaping ops
// ---------------------------------------------------------------------------

/// Row gather: out[i] = table[ids[i]]. Gradients scatter-add into the table.
inline Tensor embedding(const Tensor& table, std::span<const int> ids) {
    const int v = table.rows(), d = table.cols();
    if (ids.empty()) {
        throw std::invalid_argument("embedding: empty id sequence");
    }
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw std::invalid_argument("embedding: token id out of range: " +
                                        std::to_string(id));
        }
    }
    const int t = static_cast<int>(ids.size());
    std::vector<real> out(static_cast<std::size_t>(t) * d);
    for (int i = 0; i < t; ++i) {
        const real* src = table.values().data() + static_cast<std::size_t>(ids[i]) * d;
        std::copy(src, src + d, out.begin() + static_cast<std::size_t>(i) * d);
    }
    auto tn = table.node();
    std::vector<int> ids_copy(ids.begin(), ids.end());
    return make_op({t, d}, std::move(out), {table},
                   [tn, ids_copy, d](Tensor::Node& self) {
                       if (!tn->requires_grad) {
                           return;
                       }
                       Tensor::ensure_grad(*tn);
                       for (std::size_t i = 0; i < ids_copy.size(); ++i) {
                           real* dst = tn->grad.data() +
                                       static_cast<std::size_t>(ids_copy[i]) * d;
                           const real* src = self.grad.data() + i * d;
                           for (int j = 0; j < d; ++j) {
                               dst[j] += src[j];
                           }
                       }
                   });
}

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_rows: no parts");
    }
    const int n = parts[0].cols();
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.cols() != n) {
            throw std::invalid_argument("concat_rows: column mismatch");
        }
        total += p.rows();
    }
    std::vector<real> out;
    out.reserve(static_cast<std::size_t>(total) * n);
    for (const Tensor& p : parts) {
        out.insert(out.end(), p.values().begin(), p.values().end());
    }
    std::vector<std::shared_ptr<Tensor::Node>> nodes;
    nodes.reserve(parts.size());
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
    }
    return make_op({total, n}, std::move(out), parts, [nodes](Tensor::Node& self) {
        std::size_t offset = 0;
        for (const auto& pn : nodes) {
            const std::size_t len = pn->values.size();
            if (pn->requires_grad) {
                Tensor::ensure_grad(*pn);
                for (std::size_t i = 0; i < len; ++i) {
                    pn->grad[i] += self.grad[offset + i];
                }
            }
            offset += len;
        }
    });
}

inline Tensor slice_rows(const Tensor& a, int begin, int end) {
    const int m = a.rows(), n = a.cols();
    if (begin < 0 || end > m || begin >= end) {
        throw std::invalid_argument("slice_rows: bad range");
    }
    std::vector<real> out(a.values().begin() + static_cast<std::size_t>(begin) * n,
                          a.values().begin() + static_cast<std::size_t>(end) * n);
    auto an = a.node();
    return make_op({end - begin, n}, std::move(out), {a},
                   [an, begin, n](Tensor::Node& self) {
                       if (!an->requires_grad) {
                           return;
                       }
                       Tensor::ensure_grad(*an);
                       real* dst = an->grad.data() + static_cast<std::size_t>(begin) * n;
                       for (std::size_t i = 0; i < self.grad.size(); ++i) {
                           dst[i] += self.grad[i];
                       }
                   });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) {
        throw std::invalid_argument("concat_cols: no parts");
    }
    const int m = parts[0].rows();
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != m) {
            throw std::invalid_argument("concat_cols: row mismatch");
        }
        total += p.cols();
    }
    std::vector<real> out(static_cast<std::size_t>(m) * total);
    int col = 0;
    for (const Tensor& p : parts) {
        const int pc = p.cols();
        for (int i = 0; i < m; ++i) {
            std::copy(p.values().begin() + static_cast<std::size_t>(i) * pc,
                      p.values().begin() + static_cast<std::size_t>(i + 1) * pc,
                      out.begin() + static_cast<std::size_t>(i) * total + col);
        }
        col += pc;
    }
    std::vector<std::shared_ptr<Tensor::Node>> nodes;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.cols());
    }
    return make_op({m, total}, std::move(out), parts,
                   [nodes, widths, m, total](Tensor::Node& self) {
                       int col = 0;
                       for (std::size_t k = 0; k < nodes.size(); ++k) {
                           const int pc = widths[k];
                           auto& pn = nodes[k];
                           if (pn->requires_grad) {
                               Tensor::ensure_grad(*pn);
                               for (int i = 0; i < m; ++i) {
                                   for (int j = 0; j < pc; ++j) {
                                       pn->grad[static_cast<std::size_t>(i) * pc + j] +=
                                           self.grad[static_cast<std::size_t>(i) * total +
                                                     col + j];
                                   }
                               }
                           }
                           col += pc;
                       }
                   });
}

inline Tensor slice_cols(const Tensor& a, int begin, int end) {
    const int m = a.rows(), n = a.cols();
    if (begin < 0 || end > n || begin >= end) {
        throw std::invalid_argument("slice_cols: bad range");
    }
    const int w = end - begin;
    std::vector<real> out(static_cast<std::size_t>(m) * w);
    for (int i = 0; i < m; ++i) {
        std::copy(a.values().begin() + static_cast<std::size_t>(i) * n + begin,
                  a.values().begin() + static_cast<std::size_t>(i) * n + end,
                  out.begin() + static_cast<std::size_t>(i) * w);
    }
    auto an = a.node();
    return make_op({m, w}, std::move(out), {a},
                   [an, begin, m, n, w](Tensor::Node& self) {
                       if (!an->requires_grad) {
                           return;
                       }
                       Tensor::ensure_grad(*an);
                       for (int i = 0; i < m; ++i) {
                           for (int j = 0; j < w; ++j) {
                               an->grad[static_cast<std::size_t>(i) * n + begin + j] +=
                                   self.grad[static_cast<std::size_t>(i) * w + j];
                           }
                       }
                   });
}

// ---------------------------------------------------------------------------
// normalization / loss ops
// ---------------------------------------------------------------------------

/// Layer normalization over the last axis of a 2-D tensor, with affine
/// gain/shift. Normalization uses the biased variance.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& shift,
                         real eps = real(1e-5)) {
    const int m = x.rows(), n = x.cols();
    if (gain.ndim() != 1 || shift.ndim() != 1 || gain.shape()[0] != n ||
        shift.shape()[0] != n) {
        throw std::invalid_argument("layer_norm: gain/shift must have width of x");
    }
    std::vector<real> out(x.values().size());
    std::vector<real> xhat(x.values().size());
    std::vector<real> inv_sigma(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        const real* row = x.values().data() + static_cast<std::size_t>(i) * n;
        real mean = real(0);
        for (int j = 0; j < n; ++j) {
            mean += row[j];
        }
        mean /= static_cast<real>(n);
        real var = real(0);
        for (int j = 0; j < n; ++j) {
            const real d = row[j] - mean;
            var += d * d;
        }
        var /= static_cast<real>(n);
        const real inv = real(1) / std::sqrt(var + eps);
        inv_sigma[static_cast<std::size_t>(i)] = inv;
        for (int j = 0; j < n; ++j) {
            const std::size_t idx = static_cast<std::size_t>(i) * n + j;
            xhat[idx] = (row[j] - mean) * inv;
            out[idx] = xhat[idx] * gain.values()[j] + shift.values()[j];
        }
    }
    auto xn = x.node();
    auto gn = gain.node();
    auto sn = shift.node();
    return make_op(
        x.shape(), std::move(out), {x, gain, shift},
        [xn, gn, sn, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma), m,
         n](Tensor::Node& self) {
            if (gn->requires_grad) {
                Tensor::ensure_grad(*gn);
            }
            if (sn->requires_grad) {
                Tensor::ensure_grad(*sn);
            }
            if (xn->requires_grad) {
                Tensor::ensure_grad(*xn);
            }
            std::vector<real> dxhat(static_cast<std::size_t>(n));
            for (int i = 0; i < m; ++i) {
                const std::size_t base = static_cast<std::size_t>(i) * n;
                real m1 = real(0), m2 = real(0);
                for (int j = 0; j < n; ++j) {
                    const real g = self.grad[base + j];
                    if (gn->requires_grad) {
                        gn->grad[j] += g * xhat[base + j];
                    }
                    if (sn->requires_grad) {
                        sn->grad[j] += g;
                    }
                    dxhat[static_cast<std::size_t>(j)] = g * gn->values[j];
                    m1 += dxhat[static_cast<std::size_t>(j)];
                    m2 += dxhat[static_cast<std::size_t>(j)] * xhat[base + j];
                }
                if (!xn->requires_grad) {
                    continue;
                }
                m1 /= static_cast<real>(n);
                m2 /= static_cast<real>(n);
                const real inv = inv_sigma[static_cast<std::size_t>(i)];
                for (int j = 0; j < n; ++j) {
                    xn->grad[base + j] +=
                        inv * (dxhat[static_cast<std::size_t>(j)] - m1 -
                               xhat[base + j] * m2);
                }
            }
        });
}

/// Softmax along an axis of a 1-D or 2-D tensor, with max-subtraction.
inline Tensor softmax(const Tensor& a, int axis) {
    if (a.ndim() == 1) {
        if (axis != 0) {
            throw std::invalid_argument("softmax: invalid axis for 1-D tensor");
        }
        const int n = a.shape()[0];
        std::vector<real> out(static_cast<std::size_t>(n));
        detail::softmax_row(a.values().data(), out.data(), n);
        auto an = a.node();
        return make_op(a.shape(), std::move(out), {a}, [an, n](Tensor::Node& self) {
            if (!an->requires_grad) {
                return;
            }
            Tensor::ensure_grad(*an);
            real dot = real(0);
            for (int j = 0; j < n; ++j) {
                dot += self.grad[static_cast<std::size_t>(j)] *
                       self.values[static_cast<std::size_t>(j)];
            }
            for (int j = 0; j < n; ++j) {
                const std::size_t idx = static_cast<std::size_t>(j);
                an->grad[idx] += self.values[idx] * (self.grad[idx] - dot);
            }
        });
    }
    if (a.ndim() != 2 || (axis != 0 && axis != 1)) {
        throw std::invalid_argument("softmax: invalid axis");
    }
    if (axis == 0) {
        return transpose(softmax(transpose(a), 1));
    }
    const int m = a.rows(), n = a.cols();
    std::vector<real> out(a.values().size());
    for (int i = 0; i < m; ++i) {
        detail::softmax_row(a.values().data() + static_cast<std::size_t>(i) * n,
                            out.data() + static_cast<std::size_t>(i) * n, n);
    }
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an, m, n](Tensor::Node& self) {
        if (!an->requires_grad) {
            return;
        }
        Tensor::ensure_grad(*an);
        for (int i = 0; i < m; ++i) {
            const std::size_t base = static_cast<std::size_t>(i) * n;
            real dot = real(0);
            for (int j = 0; j < n; ++j) {
                dot += self.grad[base + j] * self.values[base + j];
            }
            for (int j = 0; j < n; ++j) {
                an->grad[base + j] +=
                    self.values[base + j] * (self.grad[base + j] - dot);
            }
        }
    });
}

/// Row softmax restricted to positions where allowed != 0; disallowed
/// positions get probability exactly zero. Every row needs one allowed entry.
inline Tensor masked_row_softmax(const Tensor& a, const std::vector<std::uint8_t>& allowed) {
    const int m = a.rows(), n = a.cols();
    if (allowed.size() != a.values().size()) {
        throw std::invalid_argument("masked_row_softmax: mask size mismatch");
    }
    std::vector<real> out(a.values().size(), real(0));
    for (int i = 0; i < m; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * n;
        real mx = real(0);
        bool any = false;
        for (int j = 0; j < n; ++j) {
            if (allowed[base + j]) {
                mx = any ? std::max(mx, a.values()[base + j]) : a.values()[base + j];
                any = true;
            }
        }
        if (!any) {
            throw std::invalid_argument("masked_row_softmax: fully masked row");
        }
        real sum = real(0);
        for (int j = 0; j < n; ++j) {
            if (allowed[base + j]) {
                out[base + j] = std::exp(a.values()[base + j] - mx);
                sum += out[base + j];
            }
        }
        const real inv = real(1) / sum;
        for (int j = 0; j < n; ++j) {
            out[base + j] *= inv;
        }
    }
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an, m, n](Tensor::Node& self) {
        if (!an->requires_grad) {
            return;
        }
        Tensor::ensure_grad(*an);
        for (int i = 0; i < m; ++i) {
            const std::size_t base = static_cast<std::size_t>(i) * n;
            real dot = real(0);
            for (int j = 0; j < n; ++j) {
                dot += self.grad[base + j] * self.values[base + j];
            }
            for (int j = 0; j < n; ++j) {
                an->grad[base + j] +=
                    self.values[base + j] * (self.grad[base + j] - dot);
            }
        }
    });
}

/// Mean over rows of -log softmax(logits)[gold]. Scalar output.
inline Tensor cross_entropy(const Tensor& logits, std::span<const int> gold_ids) {
    const int m = logits.rows(), v = logits.cols();
    if (static_cast<int>(gold_ids.size()) != m) {
        throw std::invalid_argument("cross_entropy: one gold id per row required");
    }
    for (int id : gold_ids) {
        if (id < 0 || id >= v) {
            throw std::invalid_argument("cross_entropy: gold id out of range: " +
                                        std::to_string(id));
        }
    }
    std::vector<real> probs(logits.values().size());
    real loss = real(0);
    for (int i = 0; i < m; ++i) {
        const std::size_t base = static_cast<std::size_t>(i) * v;
        detail::softmax_row(logits.values().data() + base, probs.data() + base, v);
        const real lse = detail::logsumexp_row(logits.values().data() + base, v);
        loss += lse - logits.values()[base + gold_ids[static_cast<std::size_t>(i)]];
    }
    loss /= static_cast<real>(m);
    auto ln = logits.node();
    std::vector<int> ids_copy(gold_ids.begin(), gold_ids.end());
    return make_op({1}, {loss}, {logits},
                   [ln, probs = std::move(probs), ids_copy, m, v](Tensor::Node& self) {
                       if (!ln->requires_grad) {
                           return;
                       }
                       Tensor::ensure_grad(*ln);
                       const real g = self.grad[0] / static_cast<real>(m);
                       for (int i = 0; i < m; ++i) {
                           const std::size_t base = static_cast<std::size_t>(i) * v;
                           for (int j = 0; j < v; ++j) {
                               real delta = probs[base + j];
                               if (j == ids_copy[static_cast<std::size_t>(i)]) {
                                   delta -= real(1);
                               }
                               ln->grad[base + j] += g * delta;
                           }
                       }
                   });
}

inline Tensor sum(const Tensor& a) {
    real s = real(0);
    for (real v : a.values()) {
        s += v;
    }
    auto an = a.node();
    return make_op({1}, {s}, {a}, [an](Tensor::Node& self) {
        if (!an->requires_grad) {
            return;
        }
        Tensor::ensure_grad(*an);
        for (auto& g : an->grad) {
            g += self.grad[0];
        }
    });
}

inline Tensor mean(const Tensor& a) {
    return scale(sum(a), real(1) / static_cast<real>(a.size()));
}

inline bool all_finite(const Tensor& a) {
    for (real v : a.values()) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

}  // namespace ctxgen
