// Dense-tensor reverse-mode autodiff on a per-batch tape.
//
// A Tape owns the graph nodes; a Tensor is a cheap handle into it. Values are
// computed eagerly at node creation, so creation order is a topological order
// and the backward sweep visits each node exactly once, in reverse. The tape
// is single-threaded and discarded after each step; long-lived state lives in
// Parameter buffers outside the tape.
//
// Real is float for training and double for finite-difference checks.
#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "signtrans/rng.hpp"

namespace signtrans {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

inline void check_shapes(bool ok, const std::string& op, const Shape& a, const Shape& b) {
    if (!ok) {
        throw std::invalid_argument(op + ": incompatible shapes " + shape_str(a) + " and " +
                                    shape_str(b));
    }
}

// (outer, n, inner) decomposition of an index space around one axis.
struct AxisView {
    int64_t outer, n, inner;
};

inline AxisView axis_view(const Shape& shape, int axis) {
    if (axis < 0) axis += static_cast<int>(shape.size());
    if (axis < 0 || axis >= static_cast<int>(shape.size())) {
        throw std::invalid_argument("axis " + std::to_string(axis) + " out of range for shape " +
                                    shape_str(shape));
    }
    AxisView v{1, shape[static_cast<size_t>(axis)], 1};
    for (int i = 0; i < axis; ++i) v.outer *= shape[static_cast<size_t>(i)];
    for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) v.inner *= shape[i];
    return v;
}

template <class Real>
struct Parameter {
    std::string name;
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;

    Parameter() = default;
    Parameter(std::string n, Shape s, std::vector<Real> v)
        : name(std::move(n)), shape(std::move(s)), value(std::move(v)) {
        grad.assign(value.size(), Real(0));
    }

    void zero_grad() { grad.assign(value.size(), Real(0)); }
};

template <class Real>
using ParamMap = std::map<std::string, Parameter<Real>>;

// Glorot-uniform samples in [-sqrt(6/(fan_in+fan_out)), +...]; 2-D shapes only.
template <class Real>
std::vector<Real> xavier_init(const Shape& shape, uint64_t seed) {
    if (shape.size() != 2) {
        throw std::invalid_argument("xavier_init expects a 2-D shape, got " + shape_str(shape));
    }
    double bound = std::sqrt(6.0 / (shape[0] + shape[1]));
    Rng rng(seed);
    std::vector<Real> out(static_cast<size_t>(numel(shape)));
    for (auto& v : out) v = static_cast<Real>(rng.uniform(-bound, bound));
    return out;
}

template <class Real>
std::vector<Real> zeros_init(const Shape& shape) {
    return std::vector<Real>(static_cast<size_t>(numel(shape)), Real(0));
}

template <class Real>
class Tape;

template <class Real>
struct Tensor {
    Tape<Real>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr; }
    const Shape& shape() const;
    const std::vector<Real>& value() const;
    const std::vector<Real>& grad() const;
};

template <class Real>
class Tape {
   public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    struct Node {
        Shape shape;
        std::vector<Real> value;
        std::vector<Real> grad;  // allocated when first touched
        bool requires_grad = false;
        bool touched = false;
        std::function<void()> backward;  // null for leaves without parameters
    };

    Tensor<Real> input(Shape shape, std::vector<Real> value) {
        if (static_cast<int64_t>(value.size()) != numel(shape)) {
            throw std::invalid_argument("input: value size does not match shape " +
                                        shape_str(shape));
        }
        return push(std::move(shape), std::move(value), false, nullptr);
    }

    Tensor<Real> constant(Shape shape, Real fill) {
        std::vector<Real> v(static_cast<size_t>(numel(shape)), fill);
        return push(std::move(shape), std::move(v), false, nullptr);
    }

    // Leaf bound to an external parameter: the value is snapshotted and the
    // backward sweep accumulates into the parameter's grad buffer.
    Tensor<Real> leaf(Parameter<Real>& param) {
        Tensor<Real> t = push(param.shape, param.value, true, nullptr);
        Node& n = node(t.id);
        Parameter<Real>* p = &param;
        int id = t.id;
        n.backward = [this, id, p]() {
            const auto& g = node(id).grad;
            for (size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
        };
        return t;
    }

    Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
    size_t size() const { return nodes_.size(); }

    Tensor<Real> push(Shape shape, std::vector<Real> value, bool requires_grad,
                      std::function<void()> backward) {
        Node n;
        n.shape = std::move(shape);
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Tensor<Real>{this, static_cast<int>(nodes_.size()) - 1};
    }

    // Grad buffer of `id`, allocated and zeroed on first use.
    std::vector<Real>& grad_of(int id) {
        Node& n = node(id);
        if (!n.touched) {
            n.grad.assign(n.value.size(), Real(0));
            n.touched = true;
        }
        return n.grad;
    }

    // Reverse sweep from a scalar loss. Each node runs its backward rule at
    // most once; untouched subgraphs are skipped.
    void backward(const Tensor<Real>& loss) {
        if (loss.tape != this) throw std::invalid_argument("backward: tensor from another tape");
        if (numel(node(loss.id).shape) != 1) {
            throw std::invalid_argument("backward: loss must be scalar, got " +
                                        shape_str(node(loss.id).shape));
        }
        grad_of(loss.id)[0] = Real(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = node(i);
            if (!n.touched || !n.backward) continue;
            n.backward();
        }
    }

   private:
    std::deque<Node> nodes_;  // stable addresses
};

template <class Real>
const Shape& Tensor<Real>::shape() const {
    return tape->node(id).shape;
}
template <class Real>
const std::vector<Real>& Tensor<Real>::value() const {
    return tape->node(id).value;
}
template <class Real>
const std::vector<Real>& Tensor<Real>::grad() const {
    return tape->node(id).grad;
}

namespace ops {

template <class Real>
Tape<Real>& tape_of(const Tensor<Real>& a) {
    if (!a.valid()) throw std::invalid_argument("operation on an invalid tensor");
    return *a.tape;
}

// Elementwise sum; `b` may also be a 1-D vector matching the last dimension
// of `a`, broadcast across the leading dimensions.
template <class Real>
Tensor<Real> add(Tensor<Real> a, Tensor<Real> b) {
    Tape<Real>& t = tape_of(a);
    const auto& as = a.shape();
    const auto& bs = b.shape();
    bool same = as == bs;
    bool row_broadcast = !same && bs.size() == 1 && !as.empty() && as.back() == bs[0];
    check_shapes(same || row_broadcast, "add", as, bs);

    const auto& av = a.value();
    const auto& bv = b.value();
    std::vector<Real> out(av.size());
    if (same) {
        for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
    } else {
        size_t n = bv.size();
        for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % n];
    }
    bool rg = t.node(a.id).requires_grad || t.node(b.id).requires_grad;
    Tensor<Real> r = t.push(as, std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, bid = b.id, rid = r.id;
        Tape<Real>* tp = &t;
        t.node(r.id).backward = [tp, aid, bid, rid, same]() {
            const auto& g = tp->node(rid).grad;
            if (tp->node(aid).requires_grad) {
                auto& ga = tp->grad_of(aid);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (tp->node(bid).requires_grad) {
                auto& gb = tp->grad_of(bid);
                if (same) {
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                } else {
                    size_t n = gb.size();
                    for (size_t i = 0; i < g.size(); ++i) gb[i % n] += g[i];
                }
            }
        };
    }
    return r;
}

// Elementwise product, same shapes only.
template <class Real>
Tensor<Real> mul(Tensor<Real> a, Tensor<Real> b) {
    Tape<Real>& t = tape_of(a);
    check_shapes(a.shape() == b.shape(), "mul", a.shape(), b.shape());
    const auto& av = a.value();
    const auto& bv = b.value();
    std::vector<Real> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
    bool rg = t.node(a.id).requires_grad || t.node(b.id).requires_grad;
    Tensor<Real> r = t.push(a.shape(), std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, bid = b.id, rid = r.id;
        Tape<Real>* tp = &t;
        t.node(r.id).backward = [tp, aid, bid, rid]() {
            const auto& g = tp->node(rid).grad;
            const auto& av = tp->node(aid).value;
            const auto& bv = tp->node(bid).value;
            if (tp->node(aid).requires_grad) {
                auto& ga = tp->grad_of(aid);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
            }
            if (tp->node(bid).requires_grad) {
                auto& gb = tp->grad_of(bid);
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
            }
        };
    }
    return r;
}

// Same data, new shape; element count must match.
template <class Real>
Tensor<Real> reshape(Tensor<Real> a, Shape shape) {
    Tape<Real>& t = tape_of(a);
    check_shapes(numel(shape) == numel(a.shape()), "reshape", a.shape(), shape);
    bool rg = t.node(a.id).requires_grad;
    Tensor<Real> r = t.push(std::move(shape), a.value(), rg, nullptr);
    if (rg) {
        int aid = a.id, rid = r.id;
        Tape<Real>* tp = &t;
        t.node(r.id).backward = [tp, aid, rid]() {
            const auto& g = tp->node(rid).grad;
            auto& ga = tp->grad_of(aid);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        };
    }
    return r;
}

template <class Real>
Tensor<Real> scale(Tensor<Real> a, Real c) {
    Tape<Real>& t = tape_of(a);
    const auto& av = a.value();
    std::vector<Real> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    bool rg = t.node(a.id).requires_grad;
    Tensor<Real> r = t.push(a.shape(), std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, rid = r.id;
        Tape<Real>* tp = &t;
        t.node(r.id).backward = [tp, aid, rid, c]() {
            const auto& g = tp->node(rid).grad;
            auto& ga = tp->grad_of(aid);
            for (size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
        };
    }
    return r;
}

// 2-D matrix product (m,k)x(k,n).
template <class Real>
Tensor<Real> matmul(Tensor<Real> a, Tensor<Real> b) {
    Tape<Real>& t = tape_of(a);
    const auto& as = a.shape();
    const auto& bs = b.shape();
    check_shapes(as.size() == 2 && bs.size() == 2 && as[1] == bs[0], "matmul", as, bs);
    int64_t m = as[0], k = as[1], n = bs[1];
    const auto& av = a.value();
    const auto& bv = b.value();
    std::vector<Real> out(static_cast<size_t>(m * n), Real(0));
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) {
            Real aip = av[static_cast<size_t>(i * k + p)];
            if (aip == Real(0)) continue;
            const Real* brow = &bv[static_cast<size_t>(p * n)];
            Real* crow = &out[static_cast<size_t>(i * n)];
            for (int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
        }
    }
    bool rg = t.node(a.id).requires_grad || t.node(b.id).requires_grad;
    Tensor<Real> r = t.push({static_cast<int>(m), static_cast<int>(n)}, std::move(out), rg,
                            nullptr);
    if (rg) {
        int aid = a.id, bid = b.id, rid = r.id;
        Tape<Real>* tp = &t;
        t.node(r.id).backward = [tp, aid, bid, rid, m, k, n]() {
            const auto& g = tp->node(rid).grad;
            const auto& av = tp->node(aid).value;
            const auto& bv = tp->node(bid).value;
            if (tp->node(aid).requires_grad) {
                auto& ga = tp->grad_of(aid);  // dA = G * B^T
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t j = 0; j < n; ++j) {
                        Real gij = g[static_cast<size_t>(i * n + j)];
                        if (gij == Real(0)) continue;
                        for (int64_t p = 0; p < k; ++p) {
                            ga[static_cast<size_t>(i * k + p)] +=
                                gij * bv[static_cast<size_t>(p * n + j)];
                        }
                    }
                }
            }
            if (tp->node(bid).requires_grad) {
                auto& gb = tp->grad_of(bid);  // dB = A^T * G
                for (int64_t i = 0; i < m; ++i) {
                    for (int64_t p = 0; p < k; ++p) {
                        Real aip = av[static_cast<size_t>(i * k + p)];
                        if (aip == Real(0)) continue;
                        const Real* grow = &g[static_cast<size_t>(i * n)];
                        Real* brow = &gb[static_cast<size_t>(p * n)];
                        for (int64_t j = 0; j < n; ++j) brow[j] += aip * grow[j];
                    }
                }
            }
        };
    }
    return r;
}

template <class Real>
Tensor<Real> transpose(Tensor<Real> a) {
    Tape<Real>& t = tape_of(a);
    const auto& as = a.shape();
    check_shapes(as.size() == 2, "transpose", as, as);
    int64_t m = as[0], n = as[1];
    const auto& av = a.value();
    std::vector<Real> out(av.size());
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            out[static_cast<size_t>(j * m + i)] = av[static_cast<size_t>(i * n + j)];
        }
    }
    bool rg = t.node(a.id).requires_grad;
    Tensor<Real> r = t.push({static_cast<int>(n), static_cast<int>(m)}, std::move(out), rg,
                            nullptr);
    if (rg) {
        int aid = a.id, rid = r.id;
        Tape<Real>* tp = &t;
        t.node(r.id).backward = [tp, aid, rid, m, n]() {
            const auto& g = tp->node(rid).grad;
            auto& ga = tp->grad_of(aid);
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < n; ++j) {
                    ga[static_cast<size_t>(i * n + j)] += g[static_cast<size_t>(j * m + i)];
                }
            }
        };
    }
    return r;
}

// Contiguous column slice of a 2-D tensor.
template <class Real>
Tensor<Real> slice_cols(Tensor<Real> a, int start, int count) {
    Tape<Real>& t = tape_of(a);
    const auto& as = a.shape();
    check_shapes(as.size() == 2 && start >= 0 && count > 0 && start + count <= as[1],
                 "slice_cols", as, Shape{start, count});
    int64_t m = as[0], n = as[1];
    const auto& av = a.value();
    std::vector<Real> out(static_cast<size_t>(m * count));
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < count; ++j) {
            out[static_cast<size_t>(i * count + j)] = av[static_cast<size_t>(i * n + start + j)];
        }
    }
    bool rg = t.node(a.id).requires_grad;
    Tensor<Real> r = t.push({static_cast<int>(m), count}, std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, rid = r.id;
        Tape<Real>* tp = &t;
        t.node(r.id).backward = [tp, aid, rid, m, n, start, count]() {
            const auto& g = tp->node(rid).grad;
            auto& ga = tp->grad_of(aid);
            for (int64_t i = 0; i < m; ++i) {
                for (int64_t j = 0; j < count; ++j) {
                    ga[static_cast<size_t>(i * n + start + j)] +=
                        g[static_cast<size_t>(i * count + j)];
                }
            }
        };
    }
    return r;
}

// Concatenation of 2-D tensors along axis 0 (rows) or 1 (columns).
template <class Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    Tape<Real>& t = tape_of(parts[0]);
    const auto& first = parts[0].shape();
    check_shapes(first.size() == 2 && (axis == 0 || axis == 1), "concat", first, Shape{axis});
    int64_t rows = first[0], cols = first[1];
    int64_t total = 0;
    bool rg = false;
    for (const auto& p : parts) {
        const auto& s = p.shape();
        check_shapes(s.size() == 2 && s[1 - axis] == first[1 - axis], "concat", first, s);
        total += s[static_cast<size_t>(axis)];
        rg = rg || t.node(p.id).requires_grad;
    }
    Shape out_shape = axis == 0 ? Shape{static_cast<int>(total), static_cast<int>(cols)}
                                : Shape{static_cast<int>(rows), static_cast<int>(total)};
    std::vector<Real> out(static_cast<size_t>(numel(out_shape)));
    int64_t offset = 0;
    for (const auto& p : parts) {
        const auto& pv = p.value();
        const auto& ps = p.shape();
        if (axis == 0) {
            std::copy(pv.begin(), pv.end(), out.begin() + offset * cols);
            offset += ps[0];
        } else {
            for (int64_t i = 0; i < rows; ++i) {
                std::copy(pv.begin() + i * ps[1], pv.begin() + (i + 1) * ps[1],
                          out.begin() + i * total + offset);
            }
            offset += ps[1];
        }
    }
    Tensor<Real> r = t.push(out_shape, std::move(out), rg, nullptr);
    if (rg) {
        std::vector<int> ids;
        std::vector<int> sizes;
        for (const auto& p : parts) {
            ids.push_back(p.id);
            sizes.push_back(p.shape()[static_cast<size_t>(axis)]);
        }
        int rid = r.id;
        Tape<Real>* tp = &t;
        t.node(r.id).backward = [tp, ids, sizes, rid, axis, rows, total]() {
            const auto& g = tp->node(rid).grad;
            int64_t offset = 0;
            for (size_t k = 0; k < ids.size(); ++k) {
                int64_t sz = sizes[k];
                if (tp->node(ids[k]).requires_grad) {
                    auto& gp = tp->grad_of(ids[k]);
                    if (axis == 0) {
                        int64_t cols = tp->node(rid).shape[1];
                        for (int64_t i = 0; i < sz * cols; ++i) gp[i] += g[offset * cols + i];
                    } else {
                        for (int64_t i = 0; i < rows; ++i) {
                            for (int64_t j = 0; j < sz; ++j) {
                                gp[static_cast<size_t>(i * sz + j)] +=
                                    g[static_cast<size_t>(i * total + offset + j)];
                            }
                        }
                    }
                }
                offset += sz;
            }
        };
    }
    return r;
}

template <class Real>
Tensor<Real> relu(Tensor<Real> a) {
    Tape<Real>& t = tape_of(a);
    const auto& av = a.value();
    std::vector<Real> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] > Real(0) ? av[i] : Real(0);
    bool rg = t.node(a.id).requires_grad;
    Tensor<Real> r = t.push(a.shape(), std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, rid = r.id;
        Tape<Real>* tp = &t;
        t.node(r.id).backward = [tp, aid, rid]() {
            const auto& g = tp->node(rid).grad;
            const auto& av = tp->node(aid).value;
            auto& ga = tp->grad_of(aid);
            for (size_t i = 0; i < g.size(); ++i) {
                if (av[i] > Real(0)) ga[i] += g[i];
            }
        };
    }
    return r;
}

// Softmax along `axis`, computed with max subtraction.
template <class Real>
Tensor<Real> softmax(Tensor<Real> a, int axis = -1) {
    Tape<Real>& t = tape_of(a);
    AxisView v = axis_view(a.shape(), axis);
    const auto& av = a.value();
    std::vector<Real> out(av.size());
    for (int64_t o = 0; o < v.outer; ++o) {
        for (int64_t in = 0; in < v.inner; ++in) {
            int64_t base = o * v.n * v.inner + in;
            Real maxv = av[static_cast<size_t>(base)];
            for (int64_t i = 1; i < v.n; ++i) {
                maxv = std::max(maxv, av[static_cast<size_t>(base + i * v.inner)]);
            }
            Real sum = Real(0);
            for (int64_t i = 0; i < v.n; ++i) {
                Real e = std::exp(av[static_cast<size_t>(base + i * v.inner)] - maxv);
                out[static_cast<size_t>(base + i * v.inner)] = e;
                sum += e;
            }
            Real inv = Real(1) / sum;
            for (int64_t i = 0; i < v.n; ++i) {
                out[static_cast<size_t>(base + i * v.inner)] *= inv;
            }
        }
    }
    bool rg = t.node(a.id).requires_grad;
    Tensor<Real> r = t.push(a.shape(), std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, rid = r.id;
        Tape<Real>* tp = &t;
        t.node(r.id).backward = [tp, aid, rid, v]() {
            const auto& g = tp->node(rid).grad;
            const auto& y = tp->node(rid).value;
            auto& ga = tp->grad_of(aid);
            for (int64_t o = 0; o < v.outer; ++o) {
                for (int64_t in = 0; in < v.inner; ++in) {
                    int64_t base = o * v.n * v.inner + in;
                    Real dot = Real(0);
                    for (int64_t i = 0; i < v.n; ++i) {
                        size_t k = static_cast<size_t>(base + i * v.inner);
                        dot += g[k] * y[k];
                    }
                    for (int64_t i = 0; i < v.n; ++i) {
                        size_t k = static_cast<size_t>(base + i * v.inner);
                        ga[k] += y[k] * (g[k] - dot);
                    }
                }
            }
        };
    }
    return r;
}

// Layer normalization along `axis` with learnable 1-D gain and bias.
template <class Real>
Tensor<Real> layer_norm(Tensor<Real> x, Tensor<Real> gain, Tensor<Real> bias, int axis = -1,
                        Real eps = Real(1e-6)) {
    Tape<Real>& t = tape_of(x);
    AxisView v = axis_view(x.shape(), axis);
    check_shapes(gain.shape() == Shape{static_cast<int>(v.n)} && gain.shape() == bias.shape(),
                 "layer_norm", x.shape(), gain.shape());
    const auto& xv = x.value();
    const auto& gv = gain.value();
    const auto& bv = bias.value();
    std::vector<Real> out(xv.size());
    std::vector<Real> xhat(xv.size());
    std::vector<Real> rstd(static_cast<size_t>(v.outer * v.inner));
    for (int64_t o = 0; o < v.outer; ++o) {
        for (int64_t in = 0; in < v.inner; ++in) {
            int64_t base = o * v.n * v.inner + in;
            Real mean = Real(0);
            for (int64_t i = 0; i < v.n; ++i) mean += xv[static_cast<size_t>(base + i * v.inner)];
            mean /= Real(v.n);
            Real var = Real(0);
            for (int64_t i = 0; i < v.n; ++i) {
                Real d = xv[static_cast<size_t>(base + i * v.inner)] - mean;
                var += d * d;
            }
            var /= Real(v.n);
            Real rs = Real(1) / std::sqrt(var + eps);
            rstd[static_cast<size_t>(o * v.inner + in)] = rs;
            for (int64_t i = 0; i < v.n; ++i) {
                size_t k = static_cast<size_t>(base + i * v.inner);
                Real xh = (xv[k] - mean) * rs;
                xhat[k] = xh;
                out[k] = xh * gv[static_cast<size_t>(i)] + bv[static_cast<size_t>(i)];
            }
        }
    }
    bool rg = t.node(x.id).requires_grad || t.node(gain.id).requires_grad ||
              t.node(bias.id).requires_grad;
    Tensor<Real> r = t.push(x.shape(), std::move(out), rg, nullptr);
    if (rg) {
        int xid = x.id, gid = gain.id, bid = bias.id, rid = r.id;
        Tape<Real>* tp = &t;
        auto xh = std::make_shared<std::vector<Real>>(std::move(xhat));
        auto rs = std::make_shared<std::vector<Real>>(std::move(rstd));
        t.node(r.id).backward = [tp, xid, gid, bid, rid, v, xh, rs]() {
            const auto& g = tp->node(rid).grad;
            const auto& gv = tp->node(gid).value;
            if (tp->node(gid).requires_grad) {
                auto& gg = tp->grad_of(gid);
                for (int64_t o = 0; o < v.outer; ++o) {
                    for (int64_t in = 0; in < v.inner; ++in) {
                        int64_t base = o * v.n * v.inner + in;
                        for (int64_t i = 0; i < v.n; ++i) {
                            size_t k = static_cast<size_t>(base + i * v.inner);
                            gg[static_cast<size_t>(i)] += g[k] * (*xh)[k];
                        }
                    }
                }
            }
            if (tp->node(bid).requires_grad) {
                auto& gb = tp->grad_of(bid);
                for (int64_t o = 0; o < v.outer; ++o) {
                    for (int64_t in = 0; in < v.inner; ++in) {
                        int64_t base = o * v.n * v.inner + in;
                        for (int64_t i = 0; i < v.n; ++i) {
                            gb[static_cast<size_t>(i)] += g[static_cast<size_t>(base + i * v.inner)];
                        }
                    }
                }
            }
            if (tp->node(xid).requires_grad) {
                auto& gx = tp->grad_of(xid);
                for (int64_t o = 0; o < v.outer; ++o) {
                    for (int64_t in = 0; in < v.inner; ++in) {
                        int64_t base = o * v.n * v.inner + in;
                        Real h_mean = Real(0), hx_mean = Real(0);
                        for (int64_t i = 0; i < v.n; ++i) {
                            size_t k = static_cast<size_t>(base + i * v.inner);
                            Real h = g[k] * gv[static_cast<size_t>(i)];
                            h_mean += h;
                            hx_mean += h * (*xh)[k];
                        }
                        h_mean /= Real(v.n);
                        hx_mean /= Real(v.n);
                        Real r_std = (*rs)[static_cast<size_t>(o * v.inner + in)];
                        for (int64_t i = 0; i < v.n; ++i) {
                            size_t k = static_cast<size_t>(base + i * v.inner);
                            Real h = g[k] * gv[static_cast<size_t>(i)];
                            gx[k] += (h - h_mean - (*xh)[k] * hx_mean) * r_std;
                        }
                    }
                }
            }
        };
    }
    return r;
}

// Mean along `axis`; the axis is removed from the shape (a rank-1 input
// reduces to a scalar of shape {1}).
template <class Real>
Tensor<Real> mean(Tensor<Real> a, int axis) {
    Tape<Real>& t = tape_of(a);
    AxisView v = axis_view(a.shape(), axis);
    if (axis < 0) axis += static_cast<int>(a.shape().size());
    Shape out_shape;
    for (size_t i = 0; i < a.shape().size(); ++i) {
        if (static_cast<int>(i) != axis) out_shape.push_back(a.shape()[i]);
    }
    if (out_shape.empty()) out_shape = {1};
    const auto& av = a.value();
    std::vector<Real> out(static_cast<size_t>(v.outer * v.inner), Real(0));
    for (int64_t o = 0; o < v.outer; ++o) {
        for (int64_t i = 0; i < v.n; ++i) {
            for (int64_t in = 0; in < v.inner; ++in) {
                out[static_cast<size_t>(o * v.inner + in)] +=
                    av[static_cast<size_t>((o * v.n + i) * v.inner + in)];
            }
        }
    }
    for (auto& x : out) x /= Real(v.n);
    bool rg = t.node(a.id).requires_grad;
    Tensor<Real> r = t.push(out_shape, std::move(out), rg, nullptr);
    if (rg) {
        int aid = a.id, rid = r.id;
        Tape<Real>* tp = &t;
        t.node(r.id).backward = [tp, aid, rid, v]() {
            const auto& g = tp->node(rid).grad;
            auto& ga = tp->grad_of(aid);
            Real inv = Real(1) / Real(v.n);
            for (int64_t o = 0; o < v.outer; ++o) {
                for (int64_t i = 0; i < v.n; ++i) {
                    for (int64_t in = 0; in < v.inner; ++in) {
                        ga[static_cast<size_t>((o * v.n + i) * v.inner + in)] +=
                            g[static_cast<size_t>(o * v.inner + in)] * inv;
                    }
                }
            }
        };
    }
    return r;
}

// Gathers rows of a (V,E) table; backward scatter-adds.
template <class Real>
Tensor<Real> embedding_lookup(Tensor<Real> table, const std::vector<int32_t>& ids) {
    Tape<Real>& t = tape_of(table);
    const auto& ts = table.shape();
    check_shapes(ts.size() == 2, "embedding_lookup", ts, Shape{});
    int64_t vocab = ts[0], width = ts[1];
    const auto& tv = table.value();
    std::vector<Real> out(ids.size() * static_cast<size_t>(width));
    for (size_t i = 0; i < ids.size(); ++i) {
        int32_t id = ids[i];
        if (id < 0 || id >= vocab) {
            throw std::invalid_argument("embedding_lookup: id " + std::to_string(id) +
                                        " out of range [0," + std::to_string(vocab) + ")");
        }
        std::copy(tv.begin() + id * width, tv.begin() + (id + 1) * width,
                  out.begin() + static_cast<int64_t>(i) * width);
    }
    bool rg = t.node(table.id).requires_grad;
    Tensor<Real> r = t.push({static_cast<int>(ids.size()), static_cast<int>(width)},
                            std::move(out), rg, nullptr);
    if (rg) {
        int tid = table.id, rid = r.id;
        Tape<Real>* tp = &t;
        auto ids_copy = std::make_shared<std::vector<int32_t>>(ids);
        t.node(r.id).backward = [tp, tid, rid, ids_copy, width]() {
            const auto& g = tp->node(rid).grad;
            auto& gt = tp->grad_of(tid);
            for (size_t i = 0; i < ids_copy->size(); ++i) {
                int64_t row = (*ids_copy)[i];
                for (int64_t j = 0; j < width; ++j) {
                    gt[static_cast<size_t>(row * width + j)] +=
                        g[i * static_cast<size_t>(width) + static_cast<size_t>(j)];
                }
            }
        };
    }
    return r;
}

template <class Real>
struct CrossEntropy {
    Tensor<Real> sum;  // scalar: summed loss over counted positions
    int64_t count;     // positions not equal to ignore_index
};

// Fused log-softmax + negative log likelihood over (L,V) logits. Rows whose
// target equals ignore_index contribute exactly zero loss and gradient.
template <class Real>
CrossEntropy<Real> cross_entropy_sum(Tensor<Real> logits, const std::vector<int32_t>& targets,
                                     int32_t ignore_index) {
    Tape<Real>& t = tape_of(logits);
    const auto& ls = logits.shape();
    check_shapes(ls.size() == 2 && static_cast<size_t>(ls[0]) == targets.size(), "cross_entropy",
                 ls, Shape{static_cast<int>(targets.size())});
    int64_t rows = ls[0], vocab = ls[1];
    const auto& lv = logits.value();
    Real total = Real(0);
    int64_t count = 0;
    for (int64_t i = 0; i < rows; ++i) {
        int32_t tgt = targets[static_cast<size_t>(i)];
        if (tgt == ignore_index) continue;
        if (tgt < 0 || tgt >= vocab) {
            throw std::invalid_argument("cross_entropy: target " + std::to_string(tgt) +
                                        " out of range [0," + std::to_string(vocab) + ")");
        }
        const Real* row = &lv[static_cast<size_t>(i * vocab)];
        Real maxv = row[0];
        for (int64_t j = 1; j < vocab; ++j) maxv = std::max(maxv, row[j]);
        Real sum = Real(0);
        for (int64_t j = 0; j < vocab; ++j) sum += std::exp(row[j] - maxv);
        total += maxv + std::log(sum) - row[tgt];
        ++count;
    }
    bool rg = t.node(logits.id).requires_grad;
    Tensor<Real> r = t.push({1}, {total}, rg, nullptr);
    if (rg) {
        int lid = logits.id, rid = r.id;
        Tape<Real>* tp = &t;
        auto tgt_copy = std::make_shared<std::vector<int32_t>>(targets);
        t.node(r.id).backward = [tp, lid, rid, tgt_copy, rows, vocab, ignore_index]() {
            Real g = tp->node(rid).grad[0];
            const auto& lv = tp->node(lid).value;
            auto& gl = tp->grad_of(lid);
            for (int64_t i = 0; i < rows; ++i) {
                int32_t tgt = (*tgt_copy)[static_cast<size_t>(i)];
                if (tgt == ignore_index) continue;
                const Real* row = &lv[static_cast<size_t>(i * vocab)];
                Real maxv = row[0];
                for (int64_t j = 1; j < vocab; ++j) maxv = std::max(maxv, row[j]);
                Real sum = Real(0);
                for (int64_t j = 0; j < vocab; ++j) sum += std::exp(row[j] - maxv);
                Real inv = Real(1) / sum;
                Real* grow = &gl[static_cast<size_t>(i * vocab)];
                for (int64_t j = 0; j < vocab; ++j) {
                    Real p = std::exp(row[j] - maxv) * inv;
                    grow[j] += g * (p - (j == tgt ? Real(1) : Real(0)));
                }
            }
        };
    }
    return {r, count};
}

// Token-mean cross-entropy; zero (constant) when every position is ignored.
template <class Real>
Tensor<Real> cross_entropy_mean(Tensor<Real> logits, const std::vector<int32_t>& targets,
                                int32_t ignore_index) {
    CrossEntropy<Real> ce = cross_entropy_sum(logits, targets, ignore_index);
    if (ce.count == 0) return tape_of(logits).constant({1}, Real(0));
    return scale(ce.sum, Real(1) / Real(ce.count));
}

// Inverted-dropout: zero with probability p, survivors scaled by 1/(1-p).
// Identity (the same tensor) when not training or p == 0.
template <class Real>
Tensor<Real> dropout(Tensor<Real> x, double p, bool training, Rng& rng) {
    if (p < 0 || p >= 1) throw std::invalid_argument("dropout: p must be in [0,1)");
    if (!training || p == 0) return x;
    Tape<Real>& t = tape_of(x);
    std::vector<Real> mask(x.value().size());
    Real keep_scale = Real(1.0 / (1.0 - p));
    for (auto& m : mask) m = rng.uniform() < p ? Real(0) : keep_scale;
    Tensor<Real> mask_leaf = t.input(x.shape(), std::move(mask));
    return mul(x, mask_leaf);
}

}  // namespace ops

// Bias-corrected Adam. Moment buffers are keyed by parameter name so the
// state survives graph rebuilds.
template <class Real>
class Adam {
   public:
    explicit Adam(Real learning_rate, Real beta1 = Real(0.9), Real beta2 = Real(0.999),
                  Real eps = Real(1e-8))
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    int64_t step_count() const { return t_; }
    Real learning_rate() const { return lr_; }

    void step(ParamMap<Real>& params) {
        ++t_;
        Real bc1 = Real(1) - std::pow(beta1_, static_cast<Real>(t_));
        Real bc2 = Real(1) - std::pow(beta2_, static_cast<Real>(t_));
        for (auto& [name, p] : params) {
            Moments& mom = moments_[name];
            if (mom.m.empty()) {
                mom.m.assign(p.value.size(), Real(0));
                mom.v.assign(p.value.size(), Real(0));
            }
            for (size_t i = 0; i < p.value.size(); ++i) {
                Real g = p.grad[i];
                mom.m[i] = beta1_ * mom.m[i] + (Real(1) - beta1_) * g;
                mom.v[i] = beta2_ * mom.v[i] + (Real(1) - beta2_) * g * g;
                Real m_hat = mom.m[i] / bc1;
                Real v_hat = mom.v[i] / bc2;
                p.value[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
            }
        }
    }

   private:
    struct Moments {
        std::vector<Real> m, v;
    };
    Real lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::map<std::string, Moments> moments_;
};

template <class Real>
void zero_grads(ParamMap<Real>& params) {
    for (auto& [name, p] : params) p.zero_grad();
}

}  // namespace signtrans
