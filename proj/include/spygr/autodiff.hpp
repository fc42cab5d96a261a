#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "spygr/ops.hpp"
#include "spygr/tensor.hpp"

namespace spygr {

/// Handle into a Tape. Only meaningful for the tape that produced it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Records one primitive per node; backward replays the
/// records in reverse insertion order, so gradient accumulation order is a
/// pure function of construction order. Single-writer while recording.
template <class T>
class Tape {
public:
    Var leaf(Tensor<T> value, bool requires_grad) {
        return push(std::move(value), requires_grad, nullptr);
    }

    Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

    const Tensor<T>& value(Var v) const { return nodes_[v.id].value; }

    /// Gradient of the last backward() pass; zeros if the leaf was never
    /// reached from the loss.
    Tensor<T> grad(Var v) const {
        const Node& n = nodes_[v.id];
        if (n.grad.numel() == 0) return Tensor<T>(n.value.shape());
        return n.grad;
    }

    std::size_t size() const { return nodes_.size(); }

    void backward(Var loss) {
        require(nodes_[loss.id].value.numel() == 1,
                "backward needs a scalar loss, got " + nodes_[loss.id].value.shape().str());
        accum(loss.id, Tensor<T>(nodes_[loss.id].value.shape(), T(1)));
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.backward_fn && n.requires && n.grad.numel() != 0) n.backward_fn(*this);
        }
    }

    // ---- primitives ------------------------------------------------------

    Var matmul(Var a, Var b) {
        Tensor<T> out = spygr::matmul(value(a), value(b));
        return push(std::move(out), requires(a) || requires(b), [a, b, o = next_id()](Tape& t) {
            const Tensor<T>& go = t.nodes_[o].grad;
            if (t.requires(a)) t.accum(a.id, spygr::matmul(go, spygr::transpose(t.value(b))));
            if (t.requires(b)) t.accum(b.id, spygr::matmul(spygr::transpose(t.value(a)), go));
        });
    }

    Var transpose(Var m) {
        Tensor<T> out = spygr::transpose(value(m));
        return push(std::move(out), requires(m), [m, o = next_id()](Tape& t) {
            if (t.requires(m)) t.accum(m.id, spygr::transpose(t.nodes_[o].grad));
        });
    }

    Var unfold(Var x) {
        const Shape s = value(x).shape();
        Tensor<T> out = unfold_hwc(value(x));
        return push(std::move(out), requires(x), [x, s, o = next_id()](Tape& t) {
            if (t.requires(x)) t.accum(x.id, fold_hwc(t.nodes_[o].grad, s.c, s.h, s.w));
        });
    }

    Var fold(Var m, int c, int h, int w) {
        Tensor<T> out = fold_hwc(value(m), c, h, w);
        return push(std::move(out), requires(m), [m, o = next_id()](Tape& t) {
            if (t.requires(m)) t.accum(m.id, unfold_hwc(t.nodes_[o].grad));
        });
    }

    Var reshape(Var x, Shape shape) {
        const Shape prev = value(x).shape();
        Tensor<T> out = value(x).reshaped(shape);
        return push(std::move(out), requires(x), [x, prev, o = next_id()](Tape& t) {
            if (t.requires(x)) t.accum(x.id, t.nodes_[o].grad.reshaped(prev));
        });
    }

    Var conv1x1(Var x, Var w, std::optional<Var> bias = std::nullopt) {
        std::optional<Tensor<T>> bv;
        if (bias) bv = value(*bias);
        Tensor<T> out = spygr::conv1x1(value(x), value(w), bv);
        const bool need = requires(x) || requires(w) || (bias && requires(*bias));
        return push(std::move(out), need, [x, w, bias, o = next_id()](Tape& t) {
            const Tensor<T>& go = t.nodes_[o].grad;
            const Shape xs = t.value(x).shape();
            const int nb = xs.n;
            Tensor<T> wt = spygr::transpose(t.value(w));
            Tensor<T> gw = Tensor<T>::matrix(t.value(w).rows(), t.value(w).cols());
            Tensor<T> gx(xs);
            for (int b = 0; b < nb; ++b) {
                Tensor<T> gob = slice_batch_tensor(go, b);
                Tensor<T> gom = unfold_hwc(gob);
                if (t.requires(x)) {
                    Tensor<T> gxb = fold_hwc(spygr::matmul(gom, wt), xs.c, xs.h, xs.w);
                    std::copy_n(gxb.data(), gxb.numel(), gx.data() + b * gxb.numel());
                }
                if (t.requires(w)) {
                    Tensor<T> xb = slice_batch_tensor(t.value(x), b);
                    gw = spygr::add(gw, spygr::matmul(spygr::transpose(unfold_hwc(xb)), gom));
                }
            }
            if (t.requires(x)) t.accum(x.id, std::move(gx));
            if (t.requires(w)) t.accum(w.id, std::move(gw));
            if (bias && t.requires(*bias)) t.accum(bias->id, channel_sums(go, t.value(*bias).shape()));
        });
    }

    Var conv3x3(Var x, Var w, std::optional<Var> bias, int stride, int pad) {
        std::optional<Tensor<T>> bv;
        if (bias) bv = value(*bias);
        Tensor<T> out = spygr::conv3x3(value(x), value(w), bv, stride, pad);
        const bool need = requires(x) || requires(w) || (bias && requires(*bias));
        return push(std::move(out), need, [x, w, bias, stride, pad, o = next_id()](Tape& t) {
            const Tensor<T>& go = t.nodes_[o].grad;
            const Tensor<T>& xv = t.value(x);
            const Tensor<T>& wv = t.value(w);
            const int nb = xs_n(xv), ci = xv.shape().c, h = xv.shape().h, wd = xv.shape().w;
            const int co = wv.shape().n, oh = go.shape().h, ow = go.shape().w;
            if (t.requires(x)) {
                Tensor<T> gx(xv.shape());
                for (int b = 0; b < nb; ++b)
                    for (int oc = 0; oc < co; ++oc) {
                        const T* g = go.data() + (static_cast<std::int64_t>(b) * co + oc) * oh * ow;
                        for (int ic = 0; ic < ci; ++ic) {
                            const T* ker = wv.data() + (static_cast<std::int64_t>(oc) * ci + ic) * 9;
                            T* gxp = gx.data() + (static_cast<std::int64_t>(b) * ci + ic) * h * wd;
                            for (int oy = 0; oy < oh; ++oy)
                                for (int ox = 0; ox < ow; ++ox) {
                                    const double gv = static_cast<double>(g[oy * ow + ox]);
                                    if (gv == 0.0) continue;
                                    for (int kh = 0; kh < 3; ++kh) {
                                        const int iy = oy * stride + kh - pad;
                                        if (iy < 0 || iy >= h) continue;
                                        for (int kw = 0; kw < 3; ++kw) {
                                            const int ix = ox * stride + kw - pad;
                                            if (ix < 0 || ix >= wd) continue;
                                            T& slot = gxp[iy * wd + ix];
                                            slot = static_cast<T>(static_cast<double>(slot) +
                                                                  gv * static_cast<double>(ker[kh * 3 + kw]));
                                        }
                                    }
                                }
                        }
                    }
                t.accum(x.id, std::move(gx));
            }
            if (t.requires(w)) {
                Tensor<T> gw(wv.shape());
                for (int b = 0; b < nb; ++b)
                    for (int oc = 0; oc < co; ++oc) {
                        const T* g = go.data() + (static_cast<std::int64_t>(b) * co + oc) * oh * ow;
                        for (int ic = 0; ic < ci; ++ic) {
                            const T* xp = xv.data() + (static_cast<std::int64_t>(b) * ci + ic) * h * wd;
                            T* gk = gw.data() + (static_cast<std::int64_t>(oc) * ci + ic) * 9;
                            for (int kh = 0; kh < 3; ++kh)
                                for (int kw = 0; kw < 3; ++kw) {
                                    double acc = static_cast<double>(gk[kh * 3 + kw]);
                                    for (int oy = 0; oy < oh; ++oy) {
                                        const int iy = oy * stride + kh - pad;
                                        if (iy < 0 || iy >= h) continue;
                                        for (int ox = 0; ox < ow; ++ox) {
                                            const int ix = ox * stride + kw - pad;
                                            if (ix < 0 || ix >= wd) continue;
                                            acc += static_cast<double>(g[oy * ow + ox]) *
                                                   static_cast<double>(xp[iy * wd + ix]);
                                        }
                                    }
                                    gk[kh * 3 + kw] = static_cast<T>(acc);
                                }
                        }
                    }
                t.accum(w.id, std::move(gw));
            }
            if (bias && t.requires(*bias)) t.accum(bias->id, channel_sums(go, t.value(*bias).shape()));
        });
    }

    Var relu(Var x) {
        Tensor<T> out = spygr::relu(value(x));
        return push(std::move(out), requires(x), [x, o = next_id()](Tape& t) {
            if (!t.requires(x)) return;
            const Tensor<T>& go = t.nodes_[o].grad;
            const Tensor<T>& xv = t.value(x);
            Tensor<T> gx(xv.shape());
            for (std::int64_t i = 0; i < gx.numel(); ++i) gx[i] = xv[i] > T(0) ? go[i] : T(0);
            t.accum(x.id, std::move(gx));
        });
    }

    Var sigmoid(Var x) {
        Tensor<T> out = spygr::sigmoid(value(x));
        return push(std::move(out), requires(x), [x, o = next_id()](Tape& t) {
            if (!t.requires(x)) return;
            const Tensor<T>& go = t.nodes_[o].grad;
            const Tensor<T>& ov = t.nodes_[o].value;
            Tensor<T> gx(ov.shape());
            for (std::int64_t i = 0; i < gx.numel(); ++i) {
                const double s = static_cast<double>(ov[i]);
                gx[i] = static_cast<T>(static_cast<double>(go[i]) * s * (1.0 - s));
            }
            t.accum(x.id, std::move(gx));
        });
    }

    Var global_avg_pool(Var x) {
        Tensor<T> out = spygr::global_avg_pool(value(x));
        return push(std::move(out), requires(x), [x, o = next_id()](Tape& t) {
            if (!t.requires(x)) return;
            const Tensor<T>& go = t.nodes_[o].grad;
            const Shape xs = t.value(x).shape();
            const std::int64_t n = static_cast<std::int64_t>(xs.h) * xs.w;
            Tensor<T> gx(xs);
            for (int b = 0; b < xs.n; ++b)
                for (int c = 0; c < xs.c; ++c) {
                    const double g = static_cast<double>(go[static_cast<std::int64_t>(b) * xs.c + c]) /
                                     static_cast<double>(n);
                    T* p = gx.data() + (static_cast<std::int64_t>(b) * xs.c + c) * n;
                    for (std::int64_t i = 0; i < n; ++i) p[i] = static_cast<T>(g);
                }
            t.accum(x.id, std::move(gx));
        });
    }

    Var add(Var a, Var b) {
        Tensor<T> out = spygr::add(value(a), value(b));
        return push(std::move(out), requires(a) || requires(b), [a, b, o = next_id()](Tape& t) {
            const Tensor<T>& go = t.nodes_[o].grad;
            if (t.requires(a)) t.accum(a.id, Tensor<T>(go));
            if (t.requires(b)) t.accum(b.id, Tensor<T>(go));
        });
    }

    Var sub(Var a, Var b) {
        Tensor<T> out = spygr::sub(value(a), value(b));
        return push(std::move(out), requires(a) || requires(b), [a, b, o = next_id()](Tape& t) {
            const Tensor<T>& go = t.nodes_[o].grad;
            if (t.requires(a)) t.accum(a.id, Tensor<T>(go));
            if (t.requires(b)) {
                Tensor<T> neg = go;
                for (auto& v : neg.values()) v = -v;
                t.accum(b.id, std::move(neg));
            }
        });
    }

    Var mul(Var a, Var b) {
        Tensor<T> out = spygr::mul(value(a), value(b));
        return push(std::move(out), requires(a) || requires(b), [a, b, o = next_id()](Tape& t) {
            const Tensor<T>& go = t.nodes_[o].grad;
            if (t.requires(a)) t.accum(a.id, spygr::mul(go, t.value(b)));
            if (t.requires(b)) t.accum(b.id, spygr::mul(go, t.value(a)));
        });
    }

    Var scale(Var x, double s) {
        Tensor<T> out = spygr::scale(value(x), s);
        return push(std::move(out), requires(x), [x, s, o = next_id()](Tape& t) {
            if (t.requires(x)) t.accum(x.id, spygr::scale(t.nodes_[o].grad, s));
        });
    }

    Var scale_rows(Var m, Var v) {
        Tensor<T> out = spygr::scale_rows(value(m), value(v));
        return push(std::move(out), requires(m) || requires(v), [m, v, o = next_id()](Tape& t) {
            const Tensor<T>& go = t.nodes_[o].grad;
            const Tensor<T>& mv = t.value(m);
            const Tensor<T>& vv = t.value(v);
            const int r = mv.rows(), c = mv.cols();
            if (t.requires(m)) t.accum(m.id, spygr::scale_rows(go, vv));
            if (t.requires(v)) {
                Tensor<T> gv(vv.shape());
                for (int i = 0; i < r; ++i) {
                    double acc = 0.0;
                    const T* grow = go.data() + static_cast<std::int64_t>(i) * c;
                    const T* mrow = mv.data() + static_cast<std::int64_t>(i) * c;
                    for (int j = 0; j < c; ++j)
                        acc += static_cast<double>(grow[j]) * static_cast<double>(mrow[j]);
                    gv[i] = static_cast<T>(acc);
                }
                t.accum(v.id, std::move(gv));
            }
        });
    }

    Var rsqrt_floor(Var x, double floor) {
        Tensor<T> out = spygr::rsqrt_floor(value(x), floor);
        return push(std::move(out), requires(x), [x, floor, o = next_id()](Tape& t) {
            if (!t.requires(x)) return;
            const Tensor<T>& go = t.nodes_[o].grad;
            const Tensor<T>& ov = t.nodes_[o].value;
            const Tensor<T>& xv = t.value(x);
            Tensor<T> gx(xv.shape());
            for (std::int64_t i = 0; i < gx.numel(); ++i) {
                if (static_cast<double>(xv[i]) > floor) {
                    const double y = static_cast<double>(ov[i]);
                    gx[i] = static_cast<T>(static_cast<double>(go[i]) * (-0.5) * y * y * y);
                }
            }
            t.accum(x.id, std::move(gx));
        });
    }

    Var maxpool2x2(Var x) {
        auto argmax = std::make_shared<std::vector<std::int32_t>>();
        Tensor<T> out = maxpool2x2_ceil(value(x), argmax.get());
        return push(std::move(out), requires(x), [x, argmax, o = next_id()](Tape& t) {
            if (t.requires(x))
                t.accum(x.id, maxpool2x2_backward(t.nodes_[o].grad, *argmax, t.value(x).shape()));
        });
    }

    Var upsample(Var x, int th, int tw) {
        Tensor<T> out = upsample_bilinear(value(x), th, tw);
        return push(std::move(out), requires(x), [x, o = next_id()](Tape& t) {
            if (t.requires(x)) {
                const Shape xs = t.value(x).shape();
                t.accum(x.id, upsample_bilinear_backward(t.nodes_[o].grad, xs.h, xs.w));
            }
        });
    }

    Var slice_batch(Var x, int b) {
        const Shape xs = value(x).shape();
        require(b >= 0 && b < xs.n, "slice_batch index out of range");
        Tensor<T> out = slice_batch_tensor(value(x), b);
        return push(std::move(out), requires(x), [x, b, o = next_id()](Tape& t) {
            if (!t.requires(x)) return;
            const Tensor<T>& go = t.nodes_[o].grad;
            Tensor<T> gx(t.value(x).shape());
            std::copy_n(go.data(), go.numel(), gx.data() + static_cast<std::int64_t>(b) * go.numel());
            t.accum(x.id, std::move(gx));
        });
    }

    Var stack_batch(const std::vector<Var>& parts) {
        require(!parts.empty(), "stack_batch needs at least one element");
        const Shape es = value(parts[0]).shape();
        require(es.n == 1, "stack_batch expects [1,C,H,W] elements, got " + es.str());
        Tensor<T> out(Shape{static_cast<int>(parts.size()), es.c, es.h, es.w});
        bool need = false;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            require(value(parts[i]).shape() == es, "stack_batch element shape mismatch");
            std::copy_n(value(parts[i]).data(), es.numel(),
                        out.data() + static_cast<std::int64_t>(i) * es.numel());
            need = need || requires(parts[i]);
        }
        return push(std::move(out), need, [parts, es, o = next_id()](Tape& t) {
            const Tensor<T>& go = t.nodes_[o].grad;
            for (std::size_t i = 0; i < parts.size(); ++i) {
                if (!t.requires(parts[i])) continue;
                Tensor<T> g(es);
                std::copy_n(go.data() + static_cast<std::int64_t>(i) * es.numel(), es.numel(), g.data());
                t.accum(parts[i].id, std::move(g));
            }
        });
    }

    Var sum(Var x) {
        Tensor<T> out(Shape{1, 1, 1, 1});
        out[0] = static_cast<T>(sum_all(value(x)));
        return push(std::move(out), requires(x), [x, o = next_id()](Tape& t) {
            if (t.requires(x))
                t.accum(x.id, Tensor<T>(t.value(x).shape(), t.nodes_[o].grad[0]));
        });
    }

    Var mean(Var x) {
        const double n = static_cast<double>(value(x).numel());
        Tensor<T> out(Shape{1, 1, 1, 1});
        out[0] = static_cast<T>(sum_all(value(x)) / n);
        return push(std::move(out), requires(x), [x, n, o = next_id()](Tape& t) {
            if (t.requires(x))
                t.accum(x.id, Tensor<T>(t.value(x).shape(),
                                        static_cast<T>(static_cast<double>(t.nodes_[o].grad[0]) / n)));
        });
    }

    /// Mean cross entropy over all N*H*W pixels of [N,K,H,W] logits against
    /// int labels (flat, length N*H*W, values in [0,K)). Softmax is cached
    /// for the backward pass; a stable log-sum-exp is used throughout.
    Var cross_entropy_mean(Var logits, std::shared_ptr<const std::vector<std::int32_t>> labels) {
        const Tensor<T>& lv = value(logits);
        const int nb = lv.shape().n, k = lv.shape().c, h = lv.shape().h, w = lv.shape().w;
        const std::int64_t npix = static_cast<std::int64_t>(nb) * h * w;
        require(static_cast<std::int64_t>(labels->size()) == npix,
                "label count " + std::to_string(labels->size()) + " vs pixels " + std::to_string(npix));
        auto probs = std::make_shared<Tensor<T>>(lv.shape());
        double loss = 0.0;
        const std::int64_t hw = static_cast<std::int64_t>(h) * w;
        for (int b = 0; b < nb; ++b)
            for (std::int64_t p = 0; p < hw; ++p) {
                const std::int32_t label = (*labels)[b * hw + p];
                require(label >= 0 && label < k,
                        "label index " + std::to_string(label) + " out of range [0," + std::to_string(k) + ")");
                double mx = -1e300;
                for (int c = 0; c < k; ++c)
                    mx = std::max(mx, static_cast<double>(lv[(static_cast<std::int64_t>(b) * k + c) * hw + p]));
                double z = 0.0;
                for (int c = 0; c < k; ++c)
                    z += std::exp(static_cast<double>(lv[(static_cast<std::int64_t>(b) * k + c) * hw + p]) - mx);
                const double logz = std::log(z) + mx;
                for (int c = 0; c < k; ++c) {
                    const std::int64_t idx = (static_cast<std::int64_t>(b) * k + c) * hw + p;
                    (*probs)[idx] = static_cast<T>(std::exp(static_cast<double>(lv[idx]) - logz));
                }
                loss -= static_cast<double>(lv[(static_cast<std::int64_t>(b) * k + label) * hw + p]) - logz;
            }
        Tensor<T> out(Shape{1, 1, 1, 1});
        out[0] = static_cast<T>(loss / static_cast<double>(npix));
        ensure_finite(out, "cross_entropy_mean");
        return push(std::move(out), requires(logits), [logits, labels, probs, npix, k, hw, nb,
                                                       o = next_id()](Tape& t) {
            if (!t.requires(logits)) return;
            const double g = static_cast<double>(t.nodes_[o].grad[0]) / static_cast<double>(npix);
            Tensor<T> gx = *probs;
            for (int b = 0; b < nb; ++b)
                for (std::int64_t p = 0; p < hw; ++p) {
                    const std::int32_t label = (*labels)[b * hw + p];
                    const std::int64_t idx = (static_cast<std::int64_t>(b) * k + label) * hw + p;
                    gx[idx] = static_cast<T>(static_cast<double>(gx[idx]) - 1.0);
                }
            for (auto& v : gx.values()) v = static_cast<T>(static_cast<double>(v) * g);
            t.accum(logits.id, std::move(gx));
        });
    }

    bool requires(Var v) const { return nodes_[v.id].requires; }

private:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;
        bool requires = false;
        std::function<void(Tape&)> backward_fn;
    };

    int next_id() const { return static_cast<int>(nodes_.size()); }

    Var push(Tensor<T>&& value, bool requires, std::function<void(Tape&)> fn) {
        Node n;
        n.value = std::move(value);
        n.requires = requires;
        if (requires) n.backward_fn = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void accum(int id, Tensor<T>&& g) {
        Node& n = nodes_[id];
        if (!n.requires) return;
        if (n.grad.numel() == 0) {
            n.grad = std::move(g);
        } else {
            for (std::int64_t i = 0; i < n.grad.numel(); ++i)
                n.grad[i] = static_cast<T>(static_cast<double>(n.grad[i]) + static_cast<double>(g[i]));
        }
    }

    static Tensor<T> slice_batch_tensor(const Tensor<T>& x, int b) {
        const Shape s = x.shape();
        Tensor<T> out(Shape{1, s.c, s.h, s.w});
        std::copy_n(x.data() + static_cast<std::int64_t>(b) * out.numel(), out.numel(), out.data());
        return out;
    }

    static Tensor<T> channel_sums(const Tensor<T>& g, Shape bias_shape) {
        const int nb = g.shape().n, c = g.shape().c;
        const std::int64_t hw = static_cast<std::int64_t>(g.shape().h) * g.shape().w;
        Tensor<T> out(bias_shape);
        for (int b = 0; b < nb; ++b)
            for (int ci = 0; ci < c; ++ci) {
                const T* p = g.data() + (static_cast<std::int64_t>(b) * c + ci) * hw;
                double acc = static_cast<double>(out[ci]);
                for (std::int64_t i = 0; i < hw; ++i) acc += static_cast<double>(p[i]);
                out[ci] = static_cast<T>(acc);
            }
        return out;
    }

    static int xs_n(const Tensor<T>& t) { return t.shape().n; }

    std::vector<Node> nodes_;
};

}  // namespace spygr
