#include "somn/autodiff.hpp"

#include <algorithm>
#include <memory>
#include <cmath>
#include <cstring>

namespace somn {

namespace {
std::string dims3(const char* what, const std::vector<int>& s) {
    return std::string(what) + TensorF::shape_str(s);
}
}  // namespace

template <typename T>
void Tape<T>::check_open(const char* op) const {
    if (backward_done_)
        throw UsageError(std::string("tape already consumed by backward; cannot add ") + op);
}

template <typename T>
void Tape<T>::check_finite(const char* op, const Tensor<T>& t) const {
    if (!checked_) return;
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!std::isfinite(static_cast<double>(t[i])))
            throw InternalError(std::string(op) + " produced a non-finite value at index " +
                                std::to_string(i));
}

template <typename T>
typename Tape<T>::Var Tape<T>::push(Tensor<T> value, bool needs_grad, std::function<void()> back) {
    Node n;
    n.owned = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
typename Tape<T>::Var Tape<T>::leaf(const Tensor<T>* external, bool needs_grad) {
    check_open("leaf");
    if (!external) throw UsageError("leaf: null tensor");
    Node n;
    n.ext = external;
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
typename Tape<T>::Var Tape<T>::constant(Tensor<T> value) {
    check_open("constant");
    return push(std::move(value), false, nullptr);
}

template <typename T>
Tensor<T>& Tape<T>::grad_of(int idx) {
    Node& n = nodes_[static_cast<size_t>(idx)];
    if (n.grad.numel() == 0) n.grad = Tensor<T>(n.value().shape());
    return n.grad;
}

template <typename T>
const Tensor<T>& Tape<T>::val(Var v) const {
    if (!v.valid() || v.idx >= static_cast<int>(nodes_.size()))
        throw UsageError("val: invalid tape handle");
    return nodes_[static_cast<size_t>(v.idx)].value();
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) const {
    if (!v.valid() || v.idx >= static_cast<int>(nodes_.size()))
        throw UsageError("grad: invalid tape handle");
    if (!backward_done_) throw UsageError("grad: backward has not run");
    const Node& n = nodes_[static_cast<size_t>(v.idx)];
    if (n.grad.numel() == 0) {
        if (zero_.shape() != n.value().shape())
            const_cast<Tape*>(this)->zero_ = Tensor<T>(n.value().shape());
        return zero_;
    }
    return n.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
    if (!loss.valid() || loss.idx >= static_cast<int>(nodes_.size()))
        throw UsageError("backward without a forward pass (invalid loss handle)");
    if (backward_done_) throw UsageError("backward already ran on this tape");
    const Node& ln = nodes_[static_cast<size_t>(loss.idx)];
    if (ln.value().numel() != 1)
        throw UsageError("backward: loss must be scalar, got " + ln.value().shape_str());

    grad_of(loss.idx).fill(T(1));
    backward_done_ = true;  // set first so grad() works inside closures
    for (int i = loss.idx; i >= 0; --i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (n.needs_grad && n.back && n.grad.numel() != 0) n.back();
    }
}

// ---------------------------------------------------------------------------

template <typename T>
typename Tape<T>::Var Tape<T>::conv1d(Var xv, Var wv, Var bv, int stride, Pad pad) {
    check_open("conv1d");
    const Tensor<T>& x = val(xv);
    const Tensor<T>& w = val(wv);
    const Tensor<T>& b = val(bv);
    if (x.rank() != 3 || w.rank() != 3 || b.rank() != 1)
        throw ShapeError("conv1d: need x(N,C,L) w(O,C,K) b(O), got " + dims3("x", x.shape()) +
                         " " + dims3("w", w.shape()) + " " + dims3("b", b.shape()));
    const int n = x.dim(0), c = x.dim(1), l = x.dim(2);
    const int o = w.dim(0), k = w.dim(2);
    if (w.dim(1) != c)
        throw ShapeError("conv1d: input has " + std::to_string(c) + " channels, kernel expects " +
                         std::to_string(w.dim(1)));
    if (b.dim(0) != o)
        throw ShapeError("conv1d: bias size " + std::to_string(b.dim(0)) + " != filters " +
                         std::to_string(o));
    if (stride < 1) throw UsageError("conv1d: stride must be >= 1");

    int pad_left = 0, pad_total = 0;
    if (pad == Pad::kSame) {
        int lout_same = (l + stride - 1) / stride;
        pad_total = std::max(0, (lout_same - 1) * stride + k - l);
        pad_left = pad_total / 2;
    }
    const int lp = l + pad_total;
    if (lp < k)
        throw ShapeError("conv1d: kernel " + std::to_string(k) + " longer than padded input " +
                         std::to_string(lp));
    const int lout = (lp - k) / stride + 1;

    // Materialize the padded input once; the valid path uses x directly.
    const bool padded = pad_total > 0;
    auto xp = std::make_shared<Tensor<T>>();
    if (padded) {
        *xp = Tensor<T>({n, c, lp});
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic)
                std::memcpy(&xp->at3(in, ic, pad_left), &x.at3(in, ic, 0), sizeof(T) * l);
    }

    Tensor<T> y({n, o, lout});
    {
        const Tensor<T>& xi = padded ? *xp : x;
        for (int in = 0; in < n; ++in) {
            for (int io = 0; io < o; ++io) {
                T* yr = &y.at3(in, io, 0);
                const T bias = b[io];
                for (int t = 0; t < lout; ++t) yr[t] = bias;
                for (int ic = 0; ic < c; ++ic) {
                    const T* xr = &xi.at3(in, ic, 0);
                    const T* wr = &w.at3(io, ic, 0);
                    for (int t = 0; t < lout; ++t) {
                        const T* xw = xr + static_cast<ptrdiff_t>(t) * stride;
                        T acc = 0;
                        for (int kk = 0; kk < k; ++kk) acc += xw[kk] * wr[kk];
                        yr[t] += acc;
                    }
                }
            }
        }
    }
    check_finite("conv1d", y);

    bool ng = wants(xv) || wants(wv) || wants(bv);
    Var out = push(std::move(y), ng, nullptr);
    if (!ng) return out;

    nodes_.back().back = [this, xv, wv, bv, out, stride, pad_left, padded, xp, n, c, l, o, k,
                          lout, lp]() {
        const Tensor<T>& g = grad_of(out.idx);
        const Tensor<T>& x = padded ? *xp : val(xv);
        const Tensor<T>& w = val(wv);

        if (wants(bv)) {
            Tensor<T>& db = grad_of(bv.idx);
            for (int in = 0; in < n; ++in)
                for (int io = 0; io < o; ++io) {
                    const T* gr = &g.at3(in, io, 0);
                    T acc = 0;
                    for (int t = 0; t < lout; ++t) acc += gr[t];
                    db[io] += acc;
                }
        }
        if (wants(wv)) {
            Tensor<T>& dw = grad_of(wv.idx);
            for (int in = 0; in < n; ++in)
                for (int io = 0; io < o; ++io) {
                    const T* gr = &g.at3(in, io, 0);
                    for (int ic = 0; ic < c; ++ic) {
                        const T* xr = &x.at3(in, ic, 0);
                        T* dwr = &dw.at3(io, ic, 0);
                        for (int t = 0; t < lout; ++t) {
                            const T gv = gr[t];
                            if (gv == T(0)) continue;
                            const T* xw = xr + static_cast<ptrdiff_t>(t) * stride;
                            for (int kk = 0; kk < k; ++kk) dwr[kk] += xw[kk] * gv;
                        }
                    }
                }
        }
        if (wants(xv)) {
            Tensor<T> dxp;
            Tensor<T>& dx_direct = grad_of(xv.idx);
            Tensor<T>& dx = padded ? (dxp = Tensor<T>({n, c, lp}), dxp) : dx_direct;
            for (int in = 0; in < n; ++in)
                for (int io = 0; io < o; ++io) {
                    const T* gr = &g.at3(in, io, 0);
                    const Tensor<T>& w = val(wv);
                    for (int ic = 0; ic < c; ++ic) {
                        const T* wr = &w.at3(io, ic, 0);
                        T* dxr = &dx.at3(in, ic, 0);
                        for (int t = 0; t < lout; ++t) {
                            const T gv = gr[t];
                            if (gv == T(0)) continue;
                            T* dxw = dxr + static_cast<ptrdiff_t>(t) * stride;
                            for (int kk = 0; kk < k; ++kk) dxw[kk] += wr[kk] * gv;
                        }
                    }
                }
            if (padded) {
                for (int in = 0; in < n; ++in)
                    for (int ic = 0; ic < c; ++ic) {
                        const T* src = &dxp.at3(in, ic, pad_left);
                        T* dst = &dx_direct.at3(in, ic, 0);
                        for (int t = 0; t < l; ++t) dst[t] += src[t];
                    }
            }
        }
        (void)w;
    };
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::maxpool1d(Var xv, int window, int stride) {
    check_open("maxpool1d");
    const Tensor<T>& x = val(xv);
    if (x.rank() != 3) throw ShapeError("maxpool1d: need x(N,C,L), got " + x.shape_str());
    if (window < 1) throw UsageError("maxpool1d: window must be >= 1");
    if (stride == 0) stride = window;
    const int n = x.dim(0), c = x.dim(1), l = x.dim(2);
    if (l < window)
        throw ShapeError("maxpool1d: window " + std::to_string(window) + " exceeds length " +
                         std::to_string(l));
    const int lout = (l - window) / stride + 1;

    Tensor<T> y({n, c, lout});
    auto argmax = std::make_shared<std::vector<int>>(static_cast<size_t>(n) * c * lout);
    int64_t oi = 0;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const T* xr = &x.at3(in, ic, 0);
            for (int t = 0; t < lout; ++t, ++oi) {
                int base = t * stride;
                int best = base;
                T bv = xr[base];
                for (int kk = 1; kk < window; ++kk)
                    if (xr[base + kk] > bv) {
                        bv = xr[base + kk];
                        best = base + kk;
                    }
                y[oi] = bv;
                (*argmax)[static_cast<size_t>(oi)] = best;
            }
        }
    check_finite("maxpool1d", y);

    bool ng = wants(xv);
    Var out = push(std::move(y), ng, nullptr);
    if (!ng) return out;
    nodes_.back().back = [this, xv, out, argmax, n, c, l, lout]() {
        const Tensor<T>& g = grad_of(out.idx);
        Tensor<T>& dx = grad_of(xv.idx);
        int64_t oi = 0;
        for (int in = 0; in < n; ++in)
            for (int ic = 0; ic < c; ++ic) {
                T* dxr = &dx.at3(in, ic, 0);
                for (int t = 0; t < lout; ++t, ++oi)
                    dxr[(*argmax)[static_cast<size_t>(oi)]] += g[oi];
            }
        (void)l;
    };
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::dense(Var xv, Var wv, Var bv) {
    check_open("dense");
    const Tensor<T>& x = val(xv);
    const Tensor<T>& w = val(wv);
    const Tensor<T>& b = val(bv);
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1)
        throw ShapeError("dense: need x(N,F) w(F,O) b(O), got " + dims3("x", x.shape()) + " " +
                         dims3("w", w.shape()) + " " + dims3("b", b.shape()));
    const int n = x.dim(0), f = x.dim(1), o = w.dim(1);
    if (w.dim(0) != f)
        throw ShapeError("dense: input features " + std::to_string(f) + " != weight rows " +
                         std::to_string(w.dim(0)));
    if (b.dim(0) != o)
        throw ShapeError("dense: bias size " + std::to_string(b.dim(0)) + " != outputs " +
                         std::to_string(o));

    Tensor<T> y({n, o});
    for (int in = 0; in < n; ++in) {
        T* yr = &y.at2(in, 0);
        for (int io = 0; io < o; ++io) yr[io] = b[io];
        const T* xr = &x.at2(in, 0);
        for (int jf = 0; jf < f; ++jf) {
            const T xval = xr[jf];
            if (xval == T(0)) continue;
            const T* wr = &w.at2(jf, 0);
            for (int io = 0; io < o; ++io) yr[io] += xval * wr[io];
        }
    }
    check_finite("dense", y);

    bool ng = wants(xv) || wants(wv) || wants(bv);
    Var out = push(std::move(y), ng, nullptr);
    if (!ng) return out;
    nodes_.back().back = [this, xv, wv, bv, out, n, f, o]() {
        const Tensor<T>& g = grad_of(out.idx);
        const Tensor<T>& x = val(xv);
        const Tensor<T>& w = val(wv);
        if (wants(bv)) {
            Tensor<T>& db = grad_of(bv.idx);
            for (int in = 0; in < n; ++in) {
                const T* gr = &g.at2(in, 0);
                for (int io = 0; io < o; ++io) db[io] += gr[io];
            }
        }
        if (wants(wv)) {
            Tensor<T>& dw = grad_of(wv.idx);
            for (int in = 0; in < n; ++in) {
                const T* gr = &g.at2(in, 0);
                const T* xr = &x.at2(in, 0);
                for (int jf = 0; jf < f; ++jf) {
                    const T xval = xr[jf];
                    if (xval == T(0)) continue;
                    T* dwr = &dw.at2(jf, 0);
                    for (int io = 0; io < o; ++io) dwr[io] += xval * gr[io];
                }
            }
        }
        if (wants(xv)) {
            Tensor<T>& dx = grad_of(xv.idx);
            for (int in = 0; in < n; ++in) {
                const T* gr = &g.at2(in, 0);
                T* dxr = &dx.at2(in, 0);
                for (int jf = 0; jf < f; ++jf) {
                    const T* wr = &w.at2(jf, 0);
                    T acc = 0;
                    for (int io = 0; io < o; ++io) acc += gr[io] * wr[io];
                    dxr[jf] += acc;
                }
            }
        }
    };
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::relu(Var xv) {
    check_open("relu");
    const Tensor<T>& x = val(xv);
    Tensor<T> y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    check_finite("relu", y);

    bool ng = wants(xv);
    Var out = push(std::move(y), ng, nullptr);
    if (!ng) return out;
    nodes_.back().back = [this, xv, out]() {
        const Tensor<T>& g = grad_of(out.idx);
        const Tensor<T>& x = val(xv);
        Tensor<T>& dx = grad_of(xv.idx);
        // Subgradient at exactly 0 is taken as 0.
        for (int64_t i = 0; i < x.numel(); ++i)
            if (x[i] > T(0)) dx[i] += g[i];
    };
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::dropout(Var xv, double p, Rng& rng, bool train) {
    check_open("dropout");
    if (p < 0.0 || p >= 1.0) throw UsageError("dropout: p must be in [0, 1)");
    if (!train || p == 0.0) return xv;  // identity when off

    const Tensor<T>& x = val(xv);
    auto mask = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    for (auto& m : *mask) m = rng.uniform() < p ? T(0) : scale;

    Tensor<T> y(x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] * (*mask)[static_cast<size_t>(i)];
    check_finite("dropout", y);

    bool ng = wants(xv);
    Var out = push(std::move(y), ng, nullptr);
    if (!ng) return out;
    nodes_.back().back = [this, xv, out, mask]() {
        const Tensor<T>& g = grad_of(out.idx);
        Tensor<T>& dx = grad_of(xv.idx);
        for (int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i] * (*mask)[static_cast<size_t>(i)];
    };
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::softmax(Var xv) {
    check_open("softmax");
    const Tensor<T>& x = val(xv);
    if (x.rank() != 2) throw ShapeError("softmax: need x(N,C), got " + x.shape_str());
    const int n = x.dim(0), c = x.dim(1);

    Tensor<T> y({n, c});
    for (int in = 0; in < n; ++in) {
        const T* xr = &x.at2(in, 0);
        T* yr = &y.at2(in, 0);
        T m = xr[0];
        for (int ic = 1; ic < c; ++ic) m = std::max(m, xr[ic]);
        T sum = 0;
        for (int ic = 0; ic < c; ++ic) {
            yr[ic] = std::exp(xr[ic] - m);
            sum += yr[ic];
        }
        for (int ic = 0; ic < c; ++ic) yr[ic] /= sum;
    }
    check_finite("softmax", y);

    bool ng = wants(xv);
    Var out = push(std::move(y), ng, nullptr);
    if (!ng) return out;
    nodes_.back().back = [this, xv, out, n, c]() {
        const Tensor<T>& g = grad_of(out.idx);
        const Tensor<T>& y = v(out.idx);
        Tensor<T>& dx = grad_of(xv.idx);
        for (int in = 0; in < n; ++in) {
            const T* gr = &g.at2(in, 0);
            const T* yr = &y.at2(in, 0);
            T dot = 0;
            for (int ic = 0; ic < c; ++ic) dot += gr[ic] * yr[ic];
            T* dxr = &dx.at2(in, 0);
            for (int ic = 0; ic < c; ++ic) dxr[ic] += yr[ic] * (gr[ic] - dot);
        }
    };
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::concat_cols(Var av, Var bv) {
    check_open("concat_cols");
    const Tensor<T>& a = val(av);
    const Tensor<T>& b = val(bv);
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
        throw ShapeError("concat_cols: need matching row counts, got " + a.shape_str() + " and " +
                         b.shape_str());
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);

    Tensor<T> y({n, ca + cb});
    for (int in = 0; in < n; ++in) {
        std::memcpy(&y.at2(in, 0), &a.at2(in, 0), sizeof(T) * static_cast<size_t>(ca));
        std::memcpy(&y.at2(in, ca), &b.at2(in, 0), sizeof(T) * static_cast<size_t>(cb));
    }

    bool ng = wants(av) || wants(bv);
    Var out = push(std::move(y), ng, nullptr);
    if (!ng) return out;
    nodes_.back().back = [this, av, bv, out, n, ca, cb]() {
        const Tensor<T>& g = grad_of(out.idx);
        if (wants(av)) {
            Tensor<T>& da = grad_of(av.idx);
            for (int in = 0; in < n; ++in)
                for (int ic = 0; ic < ca; ++ic) da.at2(in, ic) += g.at2(in, ic);
        }
        if (wants(bv)) {
            Tensor<T>& db = grad_of(bv.idx);
            for (int in = 0; in < n; ++in)
                for (int ic = 0; ic < cb; ++ic) db.at2(in, ic) += g.at2(in, ca + ic);
        }
    };
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::flatten(Var xv) {
    check_open("flatten");
    const Tensor<T>& x = val(xv);
    if (x.rank() != 3) throw ShapeError("flatten: need x(N,C,L), got " + x.shape_str());
    const int n = x.dim(0);
    const int64_t per = x.numel() / n;

    Tensor<T> y({n, static_cast<int>(per)}, x.values());
    bool ng = wants(xv);
    Var out = push(std::move(y), ng, nullptr);
    if (!ng) return out;
    nodes_.back().back = [this, xv, out]() {
        const Tensor<T>& g = grad_of(out.idx);
        Tensor<T>& dx = grad_of(xv.idx);
        for (int64_t i = 0; i < g.numel(); ++i) dx[i] += g[i];
    };
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::cross_entropy(Var pv, Tensor<T> targets, std::vector<T> weights) {
    check_open("cross_entropy");
    const Tensor<T>& p = val(pv);
    if (p.rank() != 2 || !p.same_shape(targets))
        throw ShapeError("cross_entropy: probs " + p.shape_str() + " and targets " +
                         targets.shape_str() + " must be equal (N,C)");
    const int n = p.dim(0), c = p.dim(1);
    if (static_cast<int>(weights.size()) != n)
        throw ShapeError("cross_entropy: need one weight per row, got " +
                         std::to_string(weights.size()) + " for " + std::to_string(n));

    const T floor_v = static_cast<T>(kProbFloor);
    double loss = 0.0;
    for (int in = 0; in < n; ++in) {
        const T* pr = &p.at2(in, 0);
        const T* tr = &targets.at2(in, 0);
        double row = 0.0;
        for (int ic = 0; ic < c; ++ic)
            if (tr[ic] != T(0))
                row -= static_cast<double>(tr[ic]) *
                       std::log(static_cast<double>(std::max(pr[ic], floor_v)));
        loss += static_cast<double>(weights[static_cast<size_t>(in)]) * row;
    }

    auto tg = std::make_shared<Tensor<T>>(std::move(targets));
    auto wg = std::make_shared<std::vector<T>>(std::move(weights));
    Tensor<T> y({1}, {static_cast<T>(loss)});
    check_finite("cross_entropy", y);

    bool ng = wants(pv);
    Var out = push(std::move(y), ng, nullptr);
    if (!ng) return out;
    nodes_.back().back = [this, pv, out, tg, wg, n, c, floor_v]() {
        const T gscale = grad_of(out.idx)[0];
        const Tensor<T>& p = v(pv.idx);
        Tensor<T>& dp = grad_of(pv.idx);
        for (int in = 0; in < n; ++in) {
            const T w = (*wg)[static_cast<size_t>(in)] * gscale;
            const T* pr = &p.at2(in, 0);
            const T* tr = &tg->at2(in, 0);
            T* dpr = &dp.at2(in, 0);
            for (int ic = 0; ic < c; ++ic) {
                if (tr[ic] == T(0)) continue;
                if (pr[ic] < floor_v) continue;  // clamped region: flat
                dpr[ic] -= w * tr[ic] / pr[ic];
            }
        }
    };
    return out;
}

template <typename T>
typename Tape<T>::Var Tape<T>::weighted_sum(Var xv, Tensor<T> coeffs) {
    check_open("weighted_sum");
    const Tensor<T>& x = val(xv);
    if (x.numel() != coeffs.numel())
        throw ShapeError("weighted_sum: " + std::to_string(coeffs.numel()) + " coeffs for " +
                         std::to_string(x.numel()) + " values");
    T acc = 0;
    for (int64_t i = 0; i < x.numel(); ++i) acc += x[i] * coeffs[i];

    auto cg = std::make_shared<Tensor<T>>(std::move(coeffs));
    bool ng = wants(xv);
    Var out = push(Tensor<T>({1}, {acc}), ng, nullptr);
    if (!ng) return out;
    nodes_.back().back = [this, xv, out, cg]() {
        const T g = grad_of(out.idx)[0];
        Tensor<T>& dx = grad_of(xv.idx);
        for (int64_t i = 0; i < dx.numel(); ++i) dx[i] += g * (*cg)[i];
    };
    return out;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace somn
