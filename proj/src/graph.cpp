#include "maestro/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>

namespace maestro::ad {

namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

[[noreturn]] void shape_fail1(const char* op, const Shape& a, const std::string& why) {
    throw ShapeError(std::string(op) + ": " + why + " for shape " + shape_str(a));
}

double stable_sigmoid(double x) {
    if (x >= 0.0) {
        const double z = std::exp(-x);
        return 1.0 / (1.0 + z);
    }
    const double z = std::exp(x);
    return z / (1.0 + z);
}

double stable_softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

// Index arithmetic for the structural ops.
std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size());
    std::size_t acc = 1;
    for (std::size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

} // namespace

Tensor& Graph::ensure_grad(Node* n) {
    if (!n->has_grad) {
        if (n->grad.data.size() == n->value.data.size()) {
            std::fill(n->grad.data.begin(), n->grad.data.end(), 0.0);
            n->grad.shape = n->value.shape;
        } else {
            n->grad = Tensor::zeros(n->value.shape);
        }
        n->has_grad = true;
    }
    return n->grad;
}

void Graph::accumulate_grad(Node* p, const std::vector<double>& g) {
    if (!p->requires_grad) return;
    Tensor& t = ensure_grad(p);
    for (std::size_t i = 0; i < g.size(); ++i) t.data[i] += g[i];
}

Node* Graph::make(Tensor v, std::vector<Node*> parents, const char* op) {
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(v);
    n.parents = std::move(parents);
    n.op = op;
    for (Node* p : n.parents) {
        if (p->requires_grad) {
            n.requires_grad = true;
            break;
        }
    }
    return &n;
}

Node* Graph::leaf(Tensor v, bool requires_grad) {
    Node* n = make(std::move(v), {}, "leaf");
    n->requires_grad = requires_grad;
    return n;
}

Node* Graph::custom(Tensor value, std::vector<Node*> parents,
                    std::function<void(Node&)> backward, const char* name) {
    Node* n = make(std::move(value), std::move(parents), name);
    if (n->requires_grad) n->backward_fn = std::move(backward);
    return n;
}

// ---------------------------------------------------------------------------
// elementwise binary ops (same shape, or either side a scalar)

namespace {
enum class BinKind { LeftScalar, RightScalar, Same };

BinKind bin_kind(const char* op, const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) return BinKind::Same;
    if (a.is_scalar()) return BinKind::LeftScalar;
    if (b.is_scalar()) return BinKind::RightScalar;
    shape_fail(op, a.shape, b.shape);
}
} // namespace

Node* Graph::add(Node* a, Node* b) {
    const BinKind k = bin_kind("add", a->value, b->value);
    const Shape& out_shape = (k == BinKind::LeftScalar) ? b->value.shape : a->value.shape;
    Tensor out = Tensor::zeros(out_shape);
    const auto& av = a->value.data;
    const auto& bv = b->value.data;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = (k == BinKind::LeftScalar ? av[0] : av[i]) +
                      (k == BinKind::RightScalar ? bv[0] : bv[i]);
    }
    Node* n = make(std::move(out), {a, b}, "add");
    if (n->requires_grad) {
        n->backward_fn = [k](Node& self) {
            const auto& g = self.grad.data;
            Node* a = self.parents[0];
            Node* b = self.parents[1];
            if (a->requires_grad) {
                Tensor& ga = ensure_grad(a);
                if (k == BinKind::LeftScalar) {
                    double s = 0.0;
                    for (double v : g) s += v;
                    ga.data[0] += s;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g[i];
                }
            }
            if (b->requires_grad) {
                Tensor& gb = ensure_grad(b);
                if (k == BinKind::RightScalar) {
                    double s = 0.0;
                    for (double v : g) s += v;
                    gb.data[0] += s;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g[i];
                }
            }
        };
    }
    return n;
}

Node* Graph::sub(Node* a, Node* b) {
    const BinKind k = bin_kind("sub", a->value, b->value);
    const Shape& out_shape = (k == BinKind::LeftScalar) ? b->value.shape : a->value.shape;
    Tensor out = Tensor::zeros(out_shape);
    const auto& av = a->value.data;
    const auto& bv = b->value.data;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = (k == BinKind::LeftScalar ? av[0] : av[i]) -
                      (k == BinKind::RightScalar ? bv[0] : bv[i]);
    }
    Node* n = make(std::move(out), {a, b}, "sub");
    if (n->requires_grad) {
        n->backward_fn = [k](Node& self) {
            const auto& g = self.grad.data;
            Node* a = self.parents[0];
            Node* b = self.parents[1];
            if (a->requires_grad) {
                Tensor& ga = ensure_grad(a);
                if (k == BinKind::LeftScalar) {
                    double s = 0.0;
                    for (double v : g) s += v;
                    ga.data[0] += s;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g[i];
                }
            }
            if (b->requires_grad) {
                Tensor& gb = ensure_grad(b);
                if (k == BinKind::RightScalar) {
                    double s = 0.0;
                    for (double v : g) s += v;
                    gb.data[0] -= s;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] -= g[i];
                }
            }
        };
    }
    return n;
}

Node* Graph::mul(Node* a, Node* b) {
    const BinKind k = bin_kind("mul", a->value, b->value);
    const Shape& out_shape = (k == BinKind::LeftScalar) ? b->value.shape : a->value.shape;
    Tensor out = Tensor::zeros(out_shape);
    const auto& av = a->value.data;
    const auto& bv = b->value.data;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = (k == BinKind::LeftScalar ? av[0] : av[i]) *
                      (k == BinKind::RightScalar ? bv[0] : bv[i]);
    }
    Node* n = make(std::move(out), {a, b}, "mul");
    if (n->requires_grad) {
        n->backward_fn = [k](Node& self) {
            const auto& g = self.grad.data;
            Node* a = self.parents[0];
            Node* b = self.parents[1];
            const auto& av = a->value.data;
            const auto& bv = b->value.data;
            if (a->requires_grad) {
                Tensor& ga = ensure_grad(a);
                if (k == BinKind::LeftScalar) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * bv[i];
                    ga.data[0] += s;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        ga.data[i] += g[i] * (k == BinKind::RightScalar ? bv[0] : bv[i]);
                }
            }
            if (b->requires_grad) {
                Tensor& gb = ensure_grad(b);
                if (k == BinKind::RightScalar) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * av[i];
                    gb.data[0] += s;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        gb.data[i] += g[i] * (k == BinKind::LeftScalar ? av[0] : av[i]);
                }
            }
        };
    }
    return n;
}

Node* Graph::div(Node* a, Node* b) {
    const BinKind k = bin_kind("div", a->value, b->value);
    const Shape& out_shape = (k == BinKind::LeftScalar) ? b->value.shape : a->value.shape;
    Tensor out = Tensor::zeros(out_shape);
    const auto& av = a->value.data;
    const auto& bv = b->value.data;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.data[i] = (k == BinKind::LeftScalar ? av[0] : av[i]) /
                      (k == BinKind::RightScalar ? bv[0] : bv[i]);
    }
    Node* n = make(std::move(out), {a, b}, "div");
    if (n->requires_grad) {
        n->backward_fn = [k](Node& self) {
            const auto& g = self.grad.data;
            Node* a = self.parents[0];
            Node* b = self.parents[1];
            const auto& av = a->value.data;
            const auto& bv = b->value.data;
            auto aval = [&](std::size_t i) { return k == BinKind::LeftScalar ? av[0] : av[i]; };
            auto bval = [&](std::size_t i) { return k == BinKind::RightScalar ? bv[0] : bv[i]; };
            if (a->requires_grad) {
                Tensor& ga = ensure_grad(a);
                if (k == BinKind::LeftScalar) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] / bval(i);
                    ga.data[0] += s;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g[i] / bval(i);
                }
            }
            if (b->requires_grad) {
                Tensor& gb = ensure_grad(b);
                if (k == BinKind::RightScalar) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < g.size(); ++i)
                        s -= g[i] * aval(i) / (bv[0] * bv[0]);
                    gb.data[0] += s;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i)
                        gb.data[i] -= g[i] * aval(i) / (bval(i) * bval(i));
                }
            }
        };
    }
    return n;
}

Node* Graph::scale(Node* a, double c) {
    Tensor out = a->value;
    for (double& v : out.data) v *= c;
    Node* n = make(std::move(out), {a}, "scale");
    if (n->requires_grad) {
        n->backward_fn = [c](Node& self) {
            Node* a = self.parents[0];
            Tensor& ga = ensure_grad(a);
            const auto& g = self.grad.data;
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += c * g[i];
        };
    }
    return n;
}

Node* Graph::add_scalar(Node* a, double c) {
    Tensor out = a->value;
    for (double& v : out.data) v += c;
    Node* n = make(std::move(out), {a}, "add_scalar");
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            Node* a = self.parents[0];
            Tensor& ga = ensure_grad(a);
            const auto& g = self.grad.data;
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g[i];
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// matmul: (..., m, k) x (..., k, n) with equal leading dims, or a rank-2
// right operand shared across the batch.

Node* Graph::matmul(Node* a, Node* b) {
    const Shape& sa = a->value.shape;
    const Shape& sb = b->value.shape;
    if (sa.size() < 2 || sb.size() < 2) shape_fail("matmul", sa, sb);
    const std::size_t m = sa[sa.size() - 2];
    const std::size_t k = sa[sa.size() - 1];
    const std::size_t kb = sb[sb.size() - 2];
    const std::size_t nn = sb[sb.size() - 1];
    if (k != kb) shape_fail("matmul", sa, sb);

    const bool shared_b = (sb.size() == 2 && sa.size() > 2);
    if (!shared_b && sa.size() != sb.size()) shape_fail("matmul", sa, sb);
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < sa.size(); ++i) {
        batch *= sa[i];
        if (!shared_b && sa[i] != sb[i]) shape_fail("matmul", sa, sb);
    }

    Shape so(sa.begin(), sa.end() - 1);
    so.push_back(nn);
    Tensor out = Tensor::zeros(so);
    for (std::size_t t = 0; t < batch; ++t) {
        matmul_acc(a->value.data.data() + t * m * k,
                   b->value.data.data() + (shared_b ? 0 : t * k * nn),
                   out.data.data() + t * m * nn, m, k, nn);
    }
    Node* n = make(std::move(out), {a, b}, "matmul");
    if (n->requires_grad) {
        n->backward_fn = [m, k, nn, batch, shared_b](Node& self) {
            Node* a = self.parents[0];
            Node* b = self.parents[1];
            const double* g = self.grad.data.data();
            if (a->requires_grad) {
                Tensor& ga = ensure_grad(a);
                // dA = dC * B^T, done as ga[i,p] += sum_j g[i,j] * b[p,j]
                for (std::size_t t = 0; t < batch; ++t) {
                    const double* gt = g + t * m * nn;
                    const double* bt = b->value.data.data() + (shared_b ? 0 : t * k * nn);
                    double* gat = ga.data.data() + t * m * k;
                    for (std::size_t i = 0; i < m; ++i) {
                        for (std::size_t p = 0; p < k; ++p) {
                            double s = 0.0;
                            const double* gi = gt + i * nn;
                            const double* bp = bt + p * nn;
                            for (std::size_t j = 0; j < nn; ++j) s += gi[j] * bp[j];
                            gat[i * k + p] += s;
                        }
                    }
                }
            }
            if (b->requires_grad) {
                Tensor& gb = ensure_grad(b);
                // dB = A^T * dC
                for (std::size_t t = 0; t < batch; ++t) {
                    const double* gt = g + t * m * nn;
                    const double* at = a->value.data.data() + t * m * k;
                    double* gbt = gb.data.data() + (shared_b ? 0 : t * k * nn);
                    for (std::size_t i = 0; i < m; ++i) {
                        const double* ai = at + i * k;
                        const double* gi = gt + i * nn;
                        for (std::size_t p = 0; p < k; ++p) {
                            const double aip = ai[p];
                            if (aip == 0.0) continue;
                            double* gbp = gbt + p * nn;
                            for (std::size_t j = 0; j < nn; ++j) gbp[j] += aip * gi[j];
                        }
                    }
                }
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// structural ops

Node* Graph::transpose(Node* a, std::size_t ax0, std::size_t ax1) {
    const Shape& s = a->value.shape;
    if (ax0 >= s.size() || ax1 >= s.size()) shape_fail1("transpose", s, "axis out of range");
    Shape so = s;
    std::swap(so[ax0], so[ax1]);
    const auto ist = strides_of(s);
    const auto ost = strides_of(so);
    Tensor out = Tensor::zeros(so);
    const std::size_t r = s.size();
    std::vector<std::size_t> idx(r, 0);
    const auto& in = a->value.data;
    for (std::size_t flat = 0; flat < in.size(); ++flat) {
        std::size_t rem = flat;
        std::size_t off = 0;
        for (std::size_t d = 0; d < r; ++d) {
            idx[d] = rem / ist[d];
            rem %= ist[d];
        }
        std::swap(idx[ax0], idx[ax1]);
        for (std::size_t d = 0; d < r; ++d) off += idx[d] * ost[d];
        out.data[off] = in[flat];
    }
    Node* n = make(std::move(out), {a}, "transpose");
    if (n->requires_grad) {
        n->backward_fn = [ax0, ax1, ist, ost, r](Node& self) {
            Node* a = self.parents[0];
            Tensor& ga = ensure_grad(a);
            const auto& g = self.grad.data;
            std::vector<std::size_t> idx(r, 0);
            for (std::size_t flat = 0; flat < ga.data.size(); ++flat) {
                std::size_t rem = flat;
                std::size_t off = 0;
                for (std::size_t d = 0; d < r; ++d) {
                    idx[d] = rem / ist[d];
                    rem %= ist[d];
                }
                std::swap(idx[ax0], idx[ax1]);
                for (std::size_t d = 0; d < r; ++d) off += idx[d] * ost[d];
                ga.data[flat] += g[off];
            }
        };
    }
    return n;
}

Node* Graph::reshape(Node* a, Shape s) {
    if (shape_numel(s) != a->value.size())
        shape_fail("reshape", a->value.shape, s);
    Tensor out(std::move(s), a->value.data);
    Node* n = make(std::move(out), {a}, "reshape");
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            accumulate_grad(self.parents[0], self.grad.data);
        };
    }
    return n;
}

Node* Graph::slice(Node* a, std::size_t axis, std::size_t start, std::size_t len) {
    const Shape& s = a->value.shape;
    if (axis >= s.size()) shape_fail1("slice", s, "axis out of range");
    if (len == 0 || start + len > s[axis]) shape_fail1("slice", s, "range out of bounds");
    Shape so = s;
    so[axis] = len;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    Tensor out = Tensor::zeros(so);
    const auto& in = a->value.data;
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = in.data() + (o * s[axis] + start) * inner;
        double* dst = out.data.data() + o * len * inner;
        std::memcpy(dst, src, len * inner * sizeof(double));
    }
    const std::size_t dim = s[axis];
    Node* n = make(std::move(out), {a}, "slice");
    if (n->requires_grad) {
        n->backward_fn = [outer, inner, start, len, dim](Node& self) {
            Node* a = self.parents[0];
            Tensor& ga = ensure_grad(a);
            const auto& g = self.grad.data;
            for (std::size_t o = 0; o < outer; ++o) {
                double* dst = ga.data.data() + (o * dim + start) * inner;
                const double* src = g.data() + o * len * inner;
                for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
            }
        };
    }
    return n;
}

Node* Graph::concat(const std::vector<Node*>& xs, std::size_t axis) {
    if (xs.empty()) throw ShapeError("concat: empty input list");
    const Shape& s0 = xs[0]->value.shape;
    if (axis >= s0.size()) shape_fail1("concat", s0, "axis out of range");
    std::size_t total = 0;
    for (Node* x : xs) {
        const Shape& s = x->value.shape;
        if (s.size() != s0.size()) shape_fail("concat", s0, s);
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i]) shape_fail("concat", s0, s);
        total += s[axis];
    }
    Shape so = s0;
    so[axis] = total;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s0[i];
    for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];
    Tensor out = Tensor::zeros(so);
    std::vector<std::size_t> dims(xs.size());
    std::size_t off = 0;
    for (std::size_t xi = 0; xi < xs.size(); ++xi) {
        const std::size_t d = xs[xi]->value.shape[axis];
        dims[xi] = d;
        const auto& in = xs[xi]->value.data;
        for (std::size_t o = 0; o < outer; ++o) {
            std::memcpy(out.data.data() + (o * total + off) * inner,
                        in.data() + o * d * inner, d * inner * sizeof(double));
        }
        off += d;
    }
    Node* n = make(std::move(out), xs, "concat");
    if (n->requires_grad) {
        n->backward_fn = [outer, inner, total, dims](Node& self) {
            const auto& g = self.grad.data;
            std::size_t off = 0;
            for (std::size_t xi = 0; xi < self.parents.size(); ++xi) {
                Node* p = self.parents[xi];
                const std::size_t d = dims[xi];
                if (p->requires_grad) {
                    Tensor& gp = ensure_grad(p);
                    for (std::size_t o = 0; o < outer; ++o) {
                        const double* src = g.data() + (o * total + off) * inner;
                        double* dst = gp.data.data() + o * d * inner;
                        for (std::size_t i = 0; i < d * inner; ++i) dst[i] += src[i];
                    }
                }
                off += d;
            }
        };
    }
    return n;
}

Node* Graph::expand(Node* a, Shape s) {
    const Shape& sa = a->value.shape;
    if (sa.size() != s.size()) shape_fail("expand", sa, s);
    for (std::size_t i = 0; i < s.size(); ++i)
        if (sa[i] != s[i] && sa[i] != 1) shape_fail("expand", sa, s);
    const auto ist = strides_of(sa);
    const auto ost = strides_of(s);
    const std::size_t r = s.size();
    Tensor out = Tensor::zeros(s);
    const auto& in = a->value.data;
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        std::size_t rem = flat, off = 0;
        for (std::size_t d = 0; d < r; ++d) {
            const std::size_t id = rem / ost[d];
            rem %= ost[d];
            off += (sa[d] == 1 ? 0 : id) * ist[d];
        }
        out.data[flat] = in[off];
    }
    Node* n = make(std::move(out), {a}, "expand");
    if (n->requires_grad) {
        n->backward_fn = [sa, ist, ost, r](Node& self) {
            Node* a = self.parents[0];
            Tensor& ga = ensure_grad(a);
            const auto& g = self.grad.data;
            for (std::size_t flat = 0; flat < g.size(); ++flat) {
                std::size_t rem = flat, off = 0;
                for (std::size_t d = 0; d < r; ++d) {
                    const std::size_t id = rem / ost[d];
                    rem %= ost[d];
                    off += (sa[d] == 1 ? 0 : id) * ist[d];
                }
                ga.data[off] += g[flat];
            }
        };
    }
    return n;
}

Node* Graph::pad_edge(Node* a, std::size_t axis, std::size_t left, std::size_t right) {
    const Shape& s = a->value.shape;
    if (axis >= s.size()) shape_fail1("pad_edge", s, "axis out of range");
    Shape so = s;
    so[axis] = s[axis] + left + right;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t dim = s[axis];
    Tensor out = Tensor::zeros(so);
    const auto& in = a->value.data;
    for (std::size_t o = 0; o < outer; ++o) {
        const double* src = in.data() + o * dim * inner;
        double* dst = out.data.data() + o * so[axis] * inner;
        for (std::size_t p = 0; p < left; ++p)
            std::memcpy(dst + p * inner, src, inner * sizeof(double));
        std::memcpy(dst + left * inner, src, dim * inner * sizeof(double));
        for (std::size_t p = 0; p < right; ++p)
            std::memcpy(dst + (left + dim + p) * inner, src + (dim - 1) * inner,
                        inner * sizeof(double));
    }
    Node* n = make(std::move(out), {a}, "pad_edge");
    if (n->requires_grad) {
        n->backward_fn = [outer, inner, dim, left, right](Node& self) {
            Node* a = self.parents[0];
            Tensor& ga = ensure_grad(a);
            const auto& g = self.grad.data;
            const std::size_t odim = dim + left + right;
            for (std::size_t o = 0; o < outer; ++o) {
                const double* src = g.data() + o * odim * inner;
                double* dst = ga.data.data() + o * dim * inner;
                for (std::size_t p = 0; p < left; ++p)
                    for (std::size_t i = 0; i < inner; ++i) dst[i] += src[p * inner + i];
                for (std::size_t t = 0; t < dim; ++t)
                    for (std::size_t i = 0; i < inner; ++i)
                        dst[t * inner + i] += src[(left + t) * inner + i];
                for (std::size_t p = 0; p < right; ++p)
                    for (std::size_t i = 0; i < inner; ++i)
                        dst[(dim - 1) * inner + i] += src[(left + dim + p) * inner + i];
            }
        };
    }
    return n;
}

// x (B, Cin, L), w (Cout, Cin/groups, k), valid correlation with dilation.
Node* Graph::conv1d(Node* x, Node* w, std::size_t dilation, std::size_t groups) {
    const Shape& sx = x->value.shape;
    const Shape& sw = w->value.shape;
    if (sx.size() != 3 || sw.size() != 3) shape_fail("conv1d", sx, sw);
    const std::size_t B = sx[0], cin = sx[1], L = sx[2];
    const std::size_t cout = sw[0], cinpg = sw[1], k = sw[2];
    if (groups == 0 || cin % groups != 0 || cout % groups != 0 || cinpg != cin / groups)
        shape_fail("conv1d", sx, sw);
    const std::size_t span = (k - 1) * dilation + 1;
    if (L < span)
        shape_fail1("conv1d", sx,
                    "input length shorter than effective kernel span " + std::to_string(span));
    const std::size_t lout = L - span + 1;
    const std::size_t copg = cout / groups;

    Tensor out = Tensor::zeros({B, cout, lout});
    const double* xv = x->value.data.data();
    const double* wv = w->value.data.data();
    double* ov = out.data.data();
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t oc = 0; oc < cout; ++oc) {
            const std::size_t gidx = oc / copg;
            const std::size_t icbase = gidx * cinpg;
            double* orow = ov + (b * cout + oc) * lout;
            for (std::size_t ic = 0; ic < cinpg; ++ic) {
                const double* xrow = xv + (b * cin + icbase + ic) * L;
                const double* wrow = wv + (oc * cinpg + ic) * k;
                for (std::size_t j = 0; j < k; ++j) {
                    const double wj = wrow[j];
                    if (wj == 0.0) continue;
                    const double* xs = xrow + j * dilation;
                    for (std::size_t t = 0; t < lout; ++t) orow[t] += wj * xs[t];
                }
            }
        }
    }
    Node* n = make(std::move(out), {x, w}, "conv1d");
    if (n->requires_grad) {
        n->backward_fn = [B, cin, L, cout, cinpg, k, lout, copg, dilation](Node& self) {
            Node* x = self.parents[0];
            Node* w = self.parents[1];
            const double* g = self.grad.data.data();
            const double* xv = x->value.data.data();
            const double* wv = w->value.data.data();
            if (x->requires_grad) {
                Tensor& gx = ensure_grad(x);
                double* gxv = gx.data.data();
                for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t oc = 0; oc < cout; ++oc) {
                        const std::size_t icbase = (oc / copg) * cinpg;
                        const double* grow = g + (b * cout + oc) * lout;
                        for (std::size_t ic = 0; ic < cinpg; ++ic) {
                            double* gxrow = gxv + (b * cin + icbase + ic) * L;
                            const double* wrow = wv + (oc * cinpg + ic) * k;
                            for (std::size_t j = 0; j < k; ++j) {
                                const double wj = wrow[j];
                                if (wj == 0.0) continue;
                                double* gxs = gxrow + j * dilation;
                                for (std::size_t t = 0; t < lout; ++t) gxs[t] += wj * grow[t];
                            }
                        }
                    }
                }
            }
            if (w->requires_grad) {
                Tensor& gw = ensure_grad(w);
                double* gwv = gw.data.data();
                for (std::size_t b = 0; b < B; ++b) {
                    for (std::size_t oc = 0; oc < cout; ++oc) {
                        const std::size_t icbase = (oc / copg) * cinpg;
                        const double* grow = g + (b * cout + oc) * lout;
                        for (std::size_t ic = 0; ic < cinpg; ++ic) {
                            const double* xrow = xv + (b * cin + icbase + ic) * L;
                            double* gwrow = gwv + (oc * cinpg + ic) * k;
                            for (std::size_t j = 0; j < k; ++j) {
                                const double* xs = xrow + j * dilation;
                                double s = 0.0;
                                for (std::size_t t = 0; t < lout; ++t) s += xs[t] * grow[t];
                                gwrow[j] += s;
                            }
                        }
                    }
                }
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// nonlinearities

template <typename F, typename DF>
Node* Graph::unary(Node* a, const char* name, F f, DF df) {
    Tensor out = Tensor::zeros(a->value.shape);
    const auto& in = a->value.data;
    for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = f(in[i]);
    Node* n = make(std::move(out), {a}, name);
    if (n->requires_grad) {
        n->backward_fn = [df](Node& self) {
            Node* a = self.parents[0];
            Tensor& ga = ensure_grad(a);
            const auto& g = self.grad.data;
            const auto& x = a->value.data;
            const auto& y = self.value.data;
            for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g[i] * df(x[i], y[i]);
        };
    }
    return n;
}

Node* Graph::exp(Node* a) {
    return unary(a, "exp", [](double x) { return std::exp(x); },
                 [](double, double y) { return y; });
}

Node* Graph::log(Node* a) {
    for (double v : a->value.data)
        if (v <= 0.0)
            throw NumericError("log: non-positive input " + std::to_string(v));
    return unary(a, "log", [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
}

Node* Graph::sqrt(Node* a) {
    for (double v : a->value.data)
        if (v < 0.0) throw NumericError("sqrt: negative input " + std::to_string(v));
    return unary(a, "sqrt", [](double x) { return std::sqrt(x); },
                 [](double, double y) { return 0.5 / std::max(y, 1e-150); });
}

Node* Graph::tanh(Node* a) {
    return unary(a, "tanh", [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
}

Node* Graph::sigmoid(Node* a) {
    return unary(a, "sigmoid", stable_sigmoid,
                 [](double, double y) { return y * (1.0 - y); });
}

Node* Graph::softplus(Node* a) {
    return unary(a, "softplus", stable_softplus,
                 [](double x, double) { return stable_sigmoid(x); });
}

Node* Graph::relu(Node* a) {
    return unary(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Node* Graph::hypot(Node* a, Node* b) {
    if (!a->value.same_shape(b->value)) shape_fail("hypot", a->value.shape, b->value.shape);
    Tensor out = Tensor::zeros(a->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] = std::hypot(a->value.data[i], b->value.data[i]);
    Node* n = make(std::move(out), {a, b}, "hypot");
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            Node* a = self.parents[0];
            Node* b = self.parents[1];
            const auto& g = self.grad.data;
            const auto& y = self.value.data;
            for (int side = 0; side < 2; ++side) {
                Node* p = side == 0 ? a : b;
                if (!p->requires_grad) continue;
                Tensor& gp = ensure_grad(p);
                const auto& x = p->value.data;
                for (std::size_t i = 0; i < g.size(); ++i)
                    gp.data[i] += y[i] > 0.0 ? g[i] * x[i] / y[i] : 0.0;
            }
        };
    }
    return n;
}

Node* Graph::huber(Node* a, double delta) {
    if (delta <= 0.0) throw NumericError("huber: delta must be positive");
    return unary(a, "huber",
                 [delta](double x) {
                     const double ax = std::abs(x);
                     return ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
                 },
                 [delta](double x, double) {
                     if (std::abs(x) <= delta) return x;
                     return x > 0.0 ? delta : -delta;
                 });
}

Node* Graph::softmax(Node* a) {
    const Shape& s = a->value.shape;
    if (s.empty()) shape_fail1("softmax", s, "rank 0");
    const std::size_t n_cols = s.back();
    const std::size_t rows = a->value.size() / n_cols;
    Tensor out = Tensor::zeros(s);
    const auto& in = a->value.data;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = in.data() + r * n_cols;
        double* y = out.data.data() + r * n_cols;
        double mx = x[0];
        for (std::size_t j = 1; j < n_cols; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < n_cols; ++j) {
            y[j] = std::exp(x[j] - mx);
            z += y[j];
        }
        for (std::size_t j = 0; j < n_cols; ++j) y[j] /= z;
    }
    Node* n = make(std::move(out), {a}, "softmax");
    if (n->requires_grad) {
        n->backward_fn = [n_cols, rows](Node& self) {
            Node* a = self.parents[0];
            Tensor& ga = ensure_grad(a);
            const auto& g = self.grad.data;
            const auto& y = self.value.data;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * n_cols;
                const double* yr = y.data() + r * n_cols;
                double dot = 0.0;
                for (std::size_t j = 0; j < n_cols; ++j) dot += gr[j] * yr[j];
                double* gar = ga.data.data() + r * n_cols;
                for (std::size_t j = 0; j < n_cols; ++j) gar[j] += yr[j] * (gr[j] - dot);
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// reductions

Node* Graph::sum(Node* a) {
    double s = 0.0;
    for (double v : a->value.data) s += v;
    Node* n = make(Tensor::scalar(s), {a}, "sum");
    if (n->requires_grad) {
        n->backward_fn = [](Node& self) {
            Node* a = self.parents[0];
            Tensor& ga = ensure_grad(a);
            const double g = self.grad.data[0];
            for (double& v : ga.data) v += g;
        };
    }
    return n;
}

Node* Graph::mean(Node* a) {
    double s = 0.0;
    for (double v : a->value.data) s += v;
    const double inv = 1.0 / static_cast<double>(a->value.size());
    Node* n = make(Tensor::scalar(s * inv), {a}, "mean");
    if (n->requires_grad) {
        n->backward_fn = [inv](Node& self) {
            Node* a = self.parents[0];
            Tensor& ga = ensure_grad(a);
            const double g = self.grad.data[0] * inv;
            for (double& v : ga.data) v += g;
        };
    }
    return n;
}

Node* Graph::sum_axis(Node* a, std::size_t axis, bool keepdim) {
    const Shape& s = a->value.shape;
    if (axis >= s.size()) shape_fail1("sum_axis", s, "axis out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t dim = s[axis];
    Shape so;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i == axis) {
            if (keepdim) so.push_back(1);
        } else {
            so.push_back(s[i]);
        }
    }
    if (so.empty()) so.push_back(1);
    Tensor out = Tensor::zeros(so);
    const auto& in = a->value.data;
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t t = 0; t < dim; ++t) {
            const double* src = in.data() + (o * dim + t) * inner;
            double* dst = out.data.data() + o * inner;
            for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    Node* n = make(std::move(out), {a}, "sum_axis");
    if (n->requires_grad) {
        n->backward_fn = [outer, inner, dim](Node& self) {
            Node* a = self.parents[0];
            Tensor& ga = ensure_grad(a);
            const auto& g = self.grad.data;
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t t = 0; t < dim; ++t) {
                    double* dst = ga.data.data() + (o * dim + t) * inner;
                    const double* src = g.data() + o * inner;
                    for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
                }
        };
    }
    return n;
}

Node* Graph::mean_axis(Node* a, std::size_t axis, bool keepdim) {
    Node* s = sum_axis(a, axis, keepdim);
    return scale(s, 1.0 / static_cast<double>(a->value.shape[axis]));
}

// Layer norm over the last axis; gamma/beta are rank-1 of that extent.
Node* Graph::layer_norm(Node* x, Node* gamma, Node* beta, double eps) {
    const Shape& s = x->value.shape;
    const std::size_t nf = s.back();
    if (gamma->value.size() != nf || beta->value.size() != nf)
        shape_fail("layer_norm", s, gamma->value.shape);
    const std::size_t rows = x->value.size() / nf;

    auto xhat = std::make_shared<std::vector<double>>(x->value.size());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    Tensor out = Tensor::zeros(s);
    const auto& in = x->value.data;
    const auto& gv = gamma->value.data;
    const auto& bv = beta->value.data;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = in.data() + r * nf;
        double mu = 0.0;
        for (std::size_t j = 0; j < nf; ++j) mu += xr[j];
        mu /= static_cast<double>(nf);
        double var = 0.0;
        for (std::size_t j = 0; j < nf; ++j) {
            const double d = xr[j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(nf);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[r] = is;
        double* yr = out.data.data() + r * nf;
        double* hr = xhat->data() + r * nf;
        for (std::size_t j = 0; j < nf; ++j) {
            hr[j] = (xr[j] - mu) * is;
            yr[j] = hr[j] * gv[j] + bv[j];
        }
    }
    Node* n = make(std::move(out), {x, gamma, beta}, "layer_norm");
    if (n->requires_grad) {
        n->backward_fn = [rows, nf, xhat, inv_std](Node& self) {
            Node* x = self.parents[0];
            Node* gamma = self.parents[1];
            Node* beta = self.parents[2];
            const auto& g = self.grad.data;
            const auto& gv = gamma->value.data;
            for (std::size_t r = 0; r < rows; ++r) {
                const double* gr = g.data() + r * nf;
                const double* hr = xhat->data() + r * nf;
                if (x->requires_grad) {
                    Tensor& gx = ensure_grad(x);
                    double* gxr = gx.data.data() + r * nf;
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t j = 0; j < nf; ++j) {
                        const double gg = gr[j] * gv[j];
                        m1 += gg;
                        m2 += gg * hr[j];
                    }
                    m1 /= static_cast<double>(nf);
                    m2 /= static_cast<double>(nf);
                    const double is = (*inv_std)[r];
                    for (std::size_t j = 0; j < nf; ++j)
                        gxr[j] += (gr[j] * gv[j] - m1 - hr[j] * m2) * is;
                }
                if (gamma->requires_grad) {
                    Tensor& gg = ensure_grad(gamma);
                    for (std::size_t j = 0; j < nf; ++j) gg.data[j] += gr[j] * hr[j];
                }
                if (beta->requires_grad) {
                    Tensor& gb = ensure_grad(beta);
                    for (std::size_t j = 0; j < nf; ++j) gb.data[j] += gr[j];
                }
            }
        };
    }
    return n;
}

// ---------------------------------------------------------------------------
// backward driver

void Graph::backward(Node* root) {
    if (root->value.size() != 1)
        throw NumericError("backward: root must be scalar, got shape " +
                           shape_str(root->value.shape));
    if (backward_done_)
        throw NumericError("backward: repeated call without zero_grad()");
    backward_done_ = true;

    ++epoch_;
    std::vector<Node*> stack{root};
    root->mark = epoch_;
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        for (Node* p : n->parents) {
            if (p->mark != epoch_ && p->requires_grad) {
                p->mark = epoch_;
                stack.push_back(p);
            }
        }
    }

    ensure_grad(root).data[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = *it;
        if (n.mark != epoch_ || !n.requires_grad || !n.has_grad) continue;
        if (n.backward_fn) n.backward_fn(n);
    }
}

void Graph::zero_grad() {
    for (Node& n : nodes_) n.has_grad = false;
    backward_done_ = false;
}

// ---------------------------------------------------------------------------
// wiring helpers

Node* linear(Graph& g, Node* x, Node* w, Node* b) {
    Node* y = g.matmul(x, w);
    return b ? add_bias(g, y, b) : y;
}

Node* add_bias(Graph& g, Node* x, Node* b) {
    const Shape& s = x->value.shape;
    if (b->value.size() != s.back())
        throw ShapeError("add_bias: bias " + shape_str(b->value.shape) +
                         " does not match last axis of " + shape_str(s));
    Shape unit(s.size(), 1);
    unit.back() = s.back();
    Node* r = g.reshape(b, unit);
    return g.add(x, g.expand(r, s));
}

Node* scale_rows(Graph& g, Node* x, Node* s) {
    const Shape& sx = x->value.shape;
    if (s->value.size() != sx[0])
        throw ShapeError("scale_rows: scales " + shape_str(s->value.shape) +
                         " do not match batch of " + shape_str(sx));
    Shape unit(sx.size(), 1);
    unit[0] = sx[0];
    Node* r = g.reshape(s, unit);
    return g.mul(x, g.expand(r, sx));
}

} // namespace maestro::ad
