#include "exgnet/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "exgnet/errors.hpp"

namespace exg::nn {

namespace {

/// Grad buffer of parent `i`, or nullptr when it does not need one.
std::vector<double>* parent_grad(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    return p.requires_grad ? &p.grad_buffer() : nullptr;
}

const std::vector<double>& parent_value(Node& self, std::size_t i) { return self.parents[i]->value; }

void require_rank(const Tensor& x, std::size_t rank, const char* op) {
    if (x.rank() != rank)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
}

struct ConvGeometry {
    std::size_t l_in, l_out, k, stride;
    std::ptrdiff_t left;
    // Output range [lo, hi) whose input index for tap k lies inside [0, l_in).
    std::pair<std::size_t, std::size_t> valid(std::size_t tap) const {
        const auto offset = static_cast<std::ptrdiff_t>(tap) - left;
        const auto s = static_cast<std::ptrdiff_t>(stride);
        std::ptrdiff_t lo = offset >= 0 ? 0 : (-offset + s - 1) / s;
        std::ptrdiff_t hi = (static_cast<std::ptrdiff_t>(l_in) - 1 - offset);
        hi = hi < 0 ? 0 : hi / s + 1;
        hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(l_out));
        if (lo > hi) lo = hi;
        return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
    }
    std::ptrdiff_t input_index(std::size_t l, std::size_t tap) const {
        return static_cast<std::ptrdiff_t>(l * stride + tap) - left;
    }
};

ConvGeometry conv_geometry(std::size_t l_in, std::size_t k, std::size_t stride) {
    const std::size_t l_out = (l_in + stride - 1) / stride;
    const std::ptrdiff_t total =
        std::max<std::ptrdiff_t>(static_cast<std::ptrdiff_t>((l_out - 1) * stride + k) - static_cast<std::ptrdiff_t>(l_in), 0);
    return {l_in, l_out, k, stride, total / 2};
}

}  // namespace

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride) {
    require_rank(x, 3, "conv1d");
    require_rank(w, 3, "conv1d weight");
    if (stride < 1) throw ShapeError("conv1d: stride must be >= 1");
    const std::size_t n = x.dim(0), c_in = x.dim(1), l_in = x.dim(2);
    const std::size_t c_out = w.dim(0), k = w.dim(2);
    if (w.dim(1) != c_in)
        throw ShapeError("conv1d: weight " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
    if (k < 1 || l_in < 1) throw ShapeError("conv1d: empty kernel or input");
    if (b.defined() && b.numel() != c_out) throw ShapeError("conv1d: bias size mismatch");
    const auto g = conv_geometry(l_in, k, stride);
    const std::size_t l_out = g.l_out;

    std::vector<double> out(n * c_out * l_out, 0.0);
    const auto& xv = x.values();
    const auto& wv = w.values();
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t co = 0; co < c_out; ++co) {
            double* o = &out[(s * c_out + co) * l_out];
            if (b.defined()) std::fill(o, o + l_out, b.at(co));
            for (std::size_t ci = 0; ci < c_in; ++ci) {
                const double* xi = &xv[(s * c_in + ci) * l_in];
                const double* wk = &wv[(co * c_in + ci) * k];
                for (std::size_t tap = 0; tap < k; ++tap) {
                    const double wt = wk[tap];
                    const auto [lo, hi] = g.valid(tap);
                    if (stride == 1) {
                        const auto off = g.input_index(0, tap);
                        for (std::size_t l = lo; l < hi; ++l) o[l] += wt * xi[static_cast<std::ptrdiff_t>(l) + off];
                    } else {
                        for (std::size_t l = lo; l < hi; ++l) o[l] += wt * xi[g.input_index(l, tap)];
                    }
                }
            }
        }

    std::vector<Tensor> parents{x, w};
    if (b.defined()) parents.push_back(b);
    const bool has_bias = b.defined();
    return make_result(
        {n, c_out, l_out}, std::move(out), std::move(parents),
        [=](Node& self) {
            const auto& gv = self.grad;
            const auto& xv = parent_value(self, 0);
            const auto& wv = parent_value(self, 1);
            auto* dx = parent_grad(self, 0);
            auto* dw = parent_grad(self, 1);
            auto* db = has_bias ? parent_grad(self, 2) : nullptr;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t co = 0; co < c_out; ++co) {
                    const double* go = &gv[(s * c_out + co) * l_out];
                    if (db) (*db)[co] += std::accumulate(go, go + l_out, 0.0);
                    for (std::size_t ci = 0; ci < c_in; ++ci) {
                        const double* xi = &xv[(s * c_in + ci) * l_in];
                        double* dxi = dx ? &(*dx)[(s * c_in + ci) * l_in] : nullptr;
                        const double* wk = &wv[(co * c_in + ci) * k];
                        double* dwk = dw ? &(*dw)[(co * c_in + ci) * k] : nullptr;
                        for (std::size_t tap = 0; tap < k; ++tap) {
                            const auto [lo, hi] = g.valid(tap);
                            double acc = 0;
                            const double wt = wk[tap];
                            for (std::size_t l = lo; l < hi; ++l) {
                                const auto idx = static_cast<std::size_t>(g.input_index(l, tap));
                                acc += go[l] * xi[idx];
                                if (dxi) dxi[idx] += wt * go[l];
                            }
                            if (dwk) dwk[tap] += acc;
                        }
                    }
                }
        },
        "conv1d");
}

Tensor depthwise_conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 3, "depthwise_conv1d");
    require_rank(w, 2, "depthwise_conv1d weight");
    const std::size_t n = x.dim(0), c = x.dim(1), l_in = x.dim(2), k = w.dim(1);
    if (w.dim(0) != c) throw ShapeError("depthwise_conv1d: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
    if (b.defined() && b.numel() != c) throw ShapeError("depthwise_conv1d: bias size mismatch");
    const auto g = conv_geometry(l_in, k, 1);

    std::vector<double> out(n * c * l_in, 0.0);
    const auto& xv = x.values();
    const auto& wv = w.values();
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch) {
            double* o = &out[(s * c + ch) * l_in];
            if (b.defined()) std::fill(o, o + l_in, b.at(ch));
            const double* xi = &xv[(s * c + ch) * l_in];
            for (std::size_t tap = 0; tap < k; ++tap) {
                const auto [lo, hi] = g.valid(tap);
                const double wt = wv[ch * k + tap];
                const auto off = g.input_index(0, tap);
                for (std::size_t l = lo; l < hi; ++l) o[l] += wt * xi[static_cast<std::ptrdiff_t>(l) + off];
            }
        }

    std::vector<Tensor> parents{x, w};
    if (b.defined()) parents.push_back(b);
    const bool has_bias = b.defined();
    return make_result(
        {n, c, l_in}, std::move(out), std::move(parents),
        [=](Node& self) {
            const auto& gv = self.grad;
            const auto& xv = parent_value(self, 0);
            const auto& wv = parent_value(self, 1);
            auto* dx = parent_grad(self, 0);
            auto* dw = parent_grad(self, 1);
            auto* db = has_bias ? parent_grad(self, 2) : nullptr;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const double* go = &gv[(s * c + ch) * l_in];
                    const double* xi = &xv[(s * c + ch) * l_in];
                    if (db) (*db)[ch] += std::accumulate(go, go + l_in, 0.0);
                    for (std::size_t tap = 0; tap < k; ++tap) {
                        const auto [lo, hi] = g.valid(tap);
                        const auto off = g.input_index(0, tap);
                        const double wt = wv[ch * k + tap];
                        double acc = 0;
                        for (std::size_t l = lo; l < hi; ++l) {
                            const auto idx = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(l) + off);
                            acc += go[l] * xi[idx];
                            if (dx) (*dx)[(s * c + ch) * l_in + idx] += wt * go[l];
                        }
                        if (dw) (*dw)[ch * k + tap] += acc;
                    }
                }
        },
        "depthwise_conv1d");
}

Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool train) {
    if (x.rank() != 2 && x.rank() != 3) throw ShapeError("batchnorm1d: expected [N, C] or [N, C, L]");
    const std::size_t n = x.dim(0), c = x.dim(1), l = x.rank() == 3 ? x.dim(2) : 1;
    if (gamma.numel() != c || beta.numel() != c) throw ShapeError("batchnorm1d: affine parameter size mismatch");
    if (state.running_mean.size() != c) {
        state.running_mean.assign(c, 0.0);
        state.running_var.assign(c, 1.0);
    }
    const std::size_t m = n * l;
    if (train && m < 2) throw ShapeError("batchnorm1d: training mode needs more than one value per channel");
    const auto& xv = x.values();
    std::vector<double> mean(c), inv_std(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
        if (train) {
            double s = 0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t t = 0; t < l; ++t) s += xv[(i * c + ch) * l + t];
            const double mu = s / static_cast<double>(m);
            double ss = 0;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t t = 0; t < l; ++t) {
                    const double d = xv[(i * c + ch) * l + t] - mu;
                    ss += d * d;
                }
            const double var = ss / static_cast<double>(m);
            mean[ch] = mu;
            inv_std[ch] = 1.0 / std::sqrt(var + state.eps);
            state.running_mean[ch] = state.momentum * state.running_mean[ch] + (1 - state.momentum) * mu;
            state.running_var[ch] = state.momentum * state.running_var[ch] +
                                    (1 - state.momentum) * var * static_cast<double>(m) / static_cast<double>(m - 1);
        } else {
            mean[ch] = state.running_mean[ch];
            inv_std[ch] = 1.0 / std::sqrt(state.running_var[ch] + state.eps);
        }
    }
    std::vector<double> xhat(xv.size()), out(xv.size());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t t = 0; t < l; ++t) {
                const auto idx = (i * c + ch) * l + t;
                xhat[idx] = (xv[idx] - mean[ch]) * inv_std[ch];
                out[idx] = gamma.at(ch) * xhat[idx] + beta.at(ch);
            }

    return make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [=, xhat = std::move(xhat)](Node& self) {
            const auto& gv = self.grad;
            const auto& gam = parent_value(self, 1);
            auto* dx = parent_grad(self, 0);
            auto* dgamma = parent_grad(self, 1);
            auto* dbeta = parent_grad(self, 2);
            for (std::size_t ch = 0; ch < c; ++ch) {
                double sum_g = 0, sum_gx = 0;
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t t = 0; t < l; ++t) {
                        const auto idx = (i * c + ch) * l + t;
                        sum_g += gv[idx];
                        sum_gx += gv[idx] * xhat[idx];
                    }
                if (dgamma) (*dgamma)[ch] += sum_gx;
                if (dbeta) (*dbeta)[ch] += sum_g;
                if (!dx) continue;
                const double scale = gam[ch] * inv_std[ch];
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t t = 0; t < l; ++t) {
                        const auto idx = (i * c + ch) * l + t;
                        if (train)
                            (*dx)[idx] += scale * (gv[idx] - sum_g / static_cast<double>(m) -
                                                   xhat[idx] * sum_gx / static_cast<double>(m));
                        else
                            (*dx)[idx] += scale * gv[idx];
                    }
            }
        },
        "batchnorm1d");
}

Tensor relu(const Tensor& x) {
    std::vector<double> out(x.values());
    for (auto& v : out) v = v > 0 ? v : 0.0;
    return make_result(
        x.shape(), std::move(out), {x},
        [](Node& self) {
            auto* dx = parent_grad(self, 0);
            if (!dx) return;
            const auto& xv = parent_value(self, 0);
            for (std::size_t i = 0; i < xv.size(); ++i)
                if (xv[i] > 0) (*dx)[i] += self.grad[i];
        },
        "relu");
}

Tensor maxpool1d(const Tensor& x) {
    if (x.rank() < 1) throw ShapeError("maxpool1d: scalar input");
    const std::size_t l_in = x.shape().back();
    const std::size_t rows = x.numel() / l_in;
    const std::size_t l_out = (l_in + 1) / 2;
    Shape shape = x.shape();
    shape.back() = l_out;
    std::vector<double> out(rows * l_out);
    std::vector<std::size_t> argmax(rows * l_out);
    const auto& xv = x.values();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < l_out; ++t) {
            std::size_t best = r * l_in + 2 * t;
            if (2 * t + 1 < l_in && xv[best + 1] > xv[best]) best += 1;
            out[r * l_out + t] = xv[best];
            argmax[r * l_out + t] = best;
        }
    return make_result(
        std::move(shape), std::move(out), {x},
        [argmax = std::move(argmax)](Node& self) {
            auto* dx = parent_grad(self, 0);
            if (!dx) return;
            for (std::size_t i = 0; i < argmax.size(); ++i) (*dx)[argmax[i]] += self.grad[i];
        },
        "maxpool1d");
}

Tensor dropout(const Tensor& x, double rate, bool train, std::mt19937_64& rng) {
    if (rate < 0 || rate >= 1) throw UsageError("dropout rate must lie in [0, 1)");
    if (!train || rate == 0) return x;
    const double keep_scale = 1.0 / (1.0 - rate);
    std::bernoulli_distribution keep(1.0 - rate);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = keep(rng) ? keep_scale : 0.0;
    std::vector<double> out(x.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return make_result(
        x.shape(), std::move(out), {x},
        [mask = std::move(mask)](Node& self) {
            auto* dx = parent_grad(self, 0);
            if (!dx) return;
            for (std::size_t i = 0; i < mask.size(); ++i) (*dx)[i] += mask[i] * self.grad[i];
        },
        "dropout");
}

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
    require_rank(x, 2, "dense");
    require_rank(w, 2, "dense weight");
    const std::size_t n = x.dim(0), f = x.dim(1), u = w.dim(0);
    if (w.dim(1) != f) throw ShapeError("dense: weight " + shape_str(w.shape()) + " vs input " + shape_str(x.shape()));
    if (b.defined() && b.numel() != u) throw ShapeError("dense: bias size mismatch");
    std::vector<double> out(n * u);
    const auto& xv = x.values();
    const auto& wv = w.values();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < u; ++j) {
            double acc = b.defined() ? b.at(j) : 0.0;
            for (std::size_t q = 0; q < f; ++q) acc += xv[i * f + q] * wv[j * f + q];
            out[i * u + j] = acc;
        }
    std::vector<Tensor> parents{x, w};
    if (b.defined()) parents.push_back(b);
    const bool has_bias = b.defined();
    return make_result(
        {n, u}, std::move(out), std::move(parents),
        [=](Node& self) {
            const auto& gv = self.grad;
            const auto& xv = parent_value(self, 0);
            const auto& wv = parent_value(self, 1);
            auto* dx = parent_grad(self, 0);
            auto* dw = parent_grad(self, 1);
            auto* db = has_bias ? parent_grad(self, 2) : nullptr;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < u; ++j) {
                    const double go = gv[i * u + j];
                    if (db) (*db)[j] += go;
                    for (std::size_t q = 0; q < f; ++q) {
                        if (dx) (*dx)[i * f + q] += go * wv[j * f + q];
                        if (dw) (*dw)[j * f + q] += go * xv[i * f + q];
                    }
                }
        },
        "dense");
}

Tensor softmax(const Tensor& x) {
    require_rank(x, 2, "softmax");
    const std::size_t n = x.dim(0), c = x.dim(1);
    std::vector<double> out(x.values());
    for (std::size_t i = 0; i < n; ++i) {
        double* row = &out[i * c];
        const double mx = *std::max_element(row, row + c);
        double z = 0;
        for (std::size_t j = 0; j < c; ++j) z += (row[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < c; ++j) row[j] /= z;
    }
    return make_result(
        x.shape(), out, {x},
        [=, y = out](Node& self) {
            auto* dx = parent_grad(self, 0);
            if (!dx) return;
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0;
                for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * y[i * c + j];
                for (std::size_t j = 0; j < c; ++j) (*dx)[i * c + j] += y[i * c + j] * (self.grad[i * c + j] - dot);
            }
        },
        "softmax");
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank(x, 3, "global_avg_pool");
    const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2);
    std::vector<double> out(n * c);
    const auto& xv = x.values();
    for (std::size_t r = 0; r < n * c; ++r)
        out[r] = std::accumulate(&xv[r * l], &xv[r * l] + l, 0.0) / static_cast<double>(l);
    return make_result(
        {n, c}, std::move(out), {x},
        [=](Node& self) {
            auto* dx = parent_grad(self, 0);
            if (!dx) return;
            for (std::size_t r = 0; r < n * c; ++r) {
                const double g = self.grad[r] / static_cast<double>(l);
                for (std::size_t t = 0; t < l; ++t) (*dx)[r * l + t] += g;
            }
        },
        "global_avg_pool");
}

Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const auto& first = parts.front().shape();
    if (first.size() < 2) throw ShapeError("concat: inputs need rank >= 2");
    const std::size_t n = first[0];
    std::size_t inner = 1;
    for (std::size_t d = 2; d < first.size(); ++d) inner *= first[d];
    std::size_t total_c = 0;
    for (const auto& p : parts) {
        const auto& s = p.shape();
        if (s.size() != first.size() || s[0] != n) throw ShapeError("concat: incompatible " + shape_str(s));
        for (std::size_t d = 2; d < s.size(); ++d)
            if (s[d] != first[d]) throw ShapeError("concat: incompatible " + shape_str(s));
        total_c += s[1];
    }
    Shape shape = first;
    shape[1] = total_c;
    std::vector<double> out(n * total_c * inner);
    std::vector<std::size_t> widths;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1) * inner;
        for (std::size_t i = 0; i < n; ++i)
            std::copy_n(&p.values()[i * w], w, &out[i * total_c * inner + offset]);
        widths.push_back(w);
        offset += w;
    }
    const std::size_t row = total_c * inner;
    return make_result(
        std::move(shape), std::move(out), parts,
        [=](Node& self) {
            std::size_t off = 0;
            for (std::size_t p = 0; p < widths.size(); ++p) {
                if (auto* dx = parent_grad(self, p))
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t q = 0; q < widths[p]; ++q) (*dx)[i * widths[p] + q] += self.grad[i * row + off + q];
                off += widths[p];
            }
        },
        "concat");
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.at(i);
    return make_result(
        a.shape(), std::move(out), {a, b},
        [](Node& self) {
            for (std::size_t p = 0; p < 2; ++p)
                if (auto* dx = parent_grad(self, p))
                    for (std::size_t i = 0; i < self.grad.size(); ++i) (*dx)[i] += self.grad[i];
        },
        "add");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.at(i);
    return make_result(
        a.shape(), std::move(out), {a, b},
        [](Node& self) {
            const auto& av = parent_value(self, 0);
            const auto& bv = parent_value(self, 1);
            if (auto* da = parent_grad(self, 0))
                for (std::size_t i = 0; i < av.size(); ++i) (*da)[i] += self.grad[i] * bv[i];
            if (auto* db = parent_grad(self, 1))
                for (std::size_t i = 0; i < av.size(); ++i) (*db)[i] += self.grad[i] * av[i];
        },
        "mul");
}

Tensor scale(const Tensor& x, double factor) {
    std::vector<double> out(x.values());
    for (auto& v : out) v *= factor;
    return make_result(
        x.shape(), std::move(out), {x},
        [factor](Node& self) {
            if (auto* dx = parent_grad(self, 0))
                for (std::size_t i = 0; i < self.grad.size(); ++i) (*dx)[i] += factor * self.grad[i];
        },
        "scale");
}

Tensor sum(const Tensor& x) {
    const double total = std::accumulate(x.values().begin(), x.values().end(), 0.0);
    return make_result(
        {1}, {total}, {x},
        [](Node& self) {
            if (auto* dx = parent_grad(self, 0))
                for (auto& v : *dx) v += self.grad[0];
        },
        "sum");
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor transpose12(const Tensor& x) {
    require_rank(x, 3, "transpose12");
    const std::size_t n = x.dim(0), a = x.dim(1), b = x.dim(2);
    std::vector<double> out(x.numel());
    const auto& xv = x.values();
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < a; ++i)
            for (std::size_t j = 0; j < b; ++j) out[(s * b + j) * a + i] = xv[(s * a + i) * b + j];
    return make_result(
        {n, b, a}, std::move(out), {x},
        [=](Node& self) {
            auto* dx = parent_grad(self, 0);
            if (!dx) return;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t i = 0; i < a; ++i)
                    for (std::size_t j = 0; j < b; ++j) (*dx)[(s * a + i) * b + j] += self.grad[(s * b + j) * a + i];
        },
        "transpose12");
}

Tensor channel_mean(const Tensor& x) {
    require_rank(x, 3, "channel_mean");
    const std::size_t n = x.dim(0), c = x.dim(1), l = x.dim(2);
    std::vector<double> out(n * l, 0.0);
    const auto& xv = x.values();
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t t = 0; t < l; ++t) out[s * l + t] += xv[(s * c + ch) * l + t];
    for (auto& v : out) v /= static_cast<double>(c);
    return make_result(
        {n, l}, std::move(out), {x},
        [=](Node& self) {
            auto* dx = parent_grad(self, 0);
            if (!dx) return;
            for (std::size_t s = 0; s < n; ++s)
                for (std::size_t ch = 0; ch < c; ++ch)
                    for (std::size_t t = 0; t < l; ++t)
                        (*dx)[(s * c + ch) * l + t] += self.grad[s * l + t] / static_cast<double>(c);
        },
        "channel_mean");
}

Tensor pick_sum(const Tensor& x, std::span<const std::size_t> index) {
    require_rank(x, 2, "pick_sum");
    const std::size_t n = x.dim(0), c = x.dim(1);
    if (index.size() != n) throw ShapeError("pick_sum: index count mismatch");
    std::vector<std::size_t> idx(index.begin(), index.end());
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (idx[i] >= c) throw UsageError("pick_sum: class index out of range");
        total += x.at(i * c + idx[i]);
    }
    return make_result(
        {1}, {total}, {x},
        [=](Node& self) {
            if (auto* dx = parent_grad(self, 0))
                for (std::size_t i = 0; i < n; ++i) (*dx)[i * c + idx[i]] += self.grad[0];
        },
        "pick_sum");
}

Tensor mul_const(const Tensor& x, std::span<const double> factor) {
    if (factor.size() != x.numel()) throw ShapeError("mul_const: size mismatch");
    std::vector<double> f(factor.begin(), factor.end());
    std::vector<double> out(x.values());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= f[i];
    return make_result(
        x.shape(), std::move(out), {x},
        [f = std::move(f)](Node& self) {
            if (auto* dx = parent_grad(self, 0))
                for (std::size_t i = 0; i < f.size(); ++i) (*dx)[i] += f[i] * self.grad[i];
        },
        "mul_const");
}

Tensor rowwise_affine_const(const Tensor& x, std::span<const double> shift, std::span<const double> divisor) {
    require_rank(x, 2, "rowwise_affine_const");
    const std::size_t n = x.dim(0), m = x.dim(1);
    if (shift.size() != n || divisor.size() != n) throw ShapeError("rowwise_affine_const: row count mismatch");
    std::vector<double> inv(n);
    for (std::size_t i = 0; i < n; ++i) inv[i] = 1.0 / divisor[i];
    std::vector<double> out(x.values());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out[i * m + j] = (out[i * m + j] - shift[i]) * inv[i];
    return make_result(
        x.shape(), std::move(out), {x},
        [=, inv = std::move(inv)](Node& self) {
            if (auto* dx = parent_grad(self, 0))
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) (*dx)[i * m + j] += self.grad[i * m + j] * inv[i];
        },
        "rowwise_affine_const");
}

Tensor weighted_sum(const std::vector<Tensor>& terms, std::span<const double> weights) {
    if (terms.size() != weights.size()) throw ShapeError("weighted_sum: term/weight count mismatch");
    std::vector<double> w(weights.begin(), weights.end());
    double total = 0;
    for (std::size_t i = 0; i < terms.size(); ++i) total += w[i] * terms[i].item();
    return make_result(
        {1}, {total}, terms,
        [w = std::move(w)](Node& self) {
            for (std::size_t i = 0; i < w.size(); ++i)
                if (auto* dx = parent_grad(self, i)) (*dx)[0] += w[i] * self.grad[0];
        },
        "weighted_sum");
}

namespace {

// y[L, U] = x[L, F] * w[U, F]^T + b[U]
void linear_rows(const double* x, const double* w, const double* b, double* y, std::size_t rows, std::size_t f,
                 std::size_t u) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < u; ++j) {
            double acc = b ? b[j] : 0.0;
            for (std::size_t q = 0; q < f; ++q) acc += x[r * f + q] * w[j * f + q];
            y[r * u + j] = acc;
        }
}

// Given dy[L, U]: dx += dy * w, dw += dy^T x, db += colsum(dy).
void linear_rows_backward(const double* x, const double* w, const double* dy, double* dx, double* dw, double* db,
                          std::size_t rows, std::size_t f, std::size_t u) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < u; ++j) {
            const double g = dy[r * u + j];
            if (db) db[j] += g;
            for (std::size_t q = 0; q < f; ++q) {
                if (dx) dx[r * f + q] += g * w[j * f + q];
                if (dw) dw[j * f + q] += g * x[r * f + q];
            }
        }
}

}  // namespace

Tensor multi_head_attention(const Tensor& x, const AttentionParams& p, std::size_t heads,
                            std::vector<double>* weights_out) {
    require_rank(x, 3, "multi_head_attention");
    const std::size_t n = x.dim(0), len = x.dim(1), d = x.dim(2);
    if (heads == 0 || d % heads != 0)
        throw UsageError("multi_head_attention: embed dim " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
    for (const Tensor* w : {&p.wq, &p.wk, &p.wv, &p.wo})
        if (w->rank() != 2 || w->dim(0) != d || w->dim(1) != d) throw ShapeError("multi_head_attention: projection shape");
    const std::size_t dh = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    const std::size_t per = len * d;

    std::vector<double> q(n * per), k(n * per), v(n * per), o(n * per), out(n * per);
    std::vector<double> attn(n * heads * len * len);
    const auto& xv = x.values();
    for (std::size_t s = 0; s < n; ++s) {
        const double* xs = &xv[s * per];
        linear_rows(xs, p.wq.values().data(), p.bq.values().data(), &q[s * per], len, d, d);
        linear_rows(xs, p.wk.values().data(), p.bk.values().data(), &k[s * per], len, d, d);
        linear_rows(xs, p.wv.values().data(), p.bv.values().data(), &v[s * per], len, d, d);
        for (std::size_t h = 0; h < heads; ++h) {
            double* a = &attn[((s * heads + h) * len) * len];
            for (std::size_t i = 0; i < len; ++i) {
                double mx = -INFINITY;
                for (std::size_t j = 0; j < len; ++j) {
                    double dot = 0;
                    for (std::size_t e = 0; e < dh; ++e) dot += q[s * per + i * d + h * dh + e] * k[s * per + j * d + h * dh + e];
                    a[i * len + j] = dot * inv_sqrt;
                    mx = std::max(mx, a[i * len + j]);
                }
                double z = 0;
                for (std::size_t j = 0; j < len; ++j) z += (a[i * len + j] = std::exp(a[i * len + j] - mx));
                for (std::size_t j = 0; j < len; ++j) a[i * len + j] /= z;
                for (std::size_t e = 0; e < dh; ++e) {
                    double acc = 0;
                    for (std::size_t j = 0; j < len; ++j) acc += a[i * len + j] * v[s * per + j * d + h * dh + e];
                    o[s * per + i * d + h * dh + e] = acc;
                }
            }
        }
        linear_rows(&o[s * per], p.wo.values().data(), p.bo.values().data(), &out[s * per], len, d, d);
    }
    if (weights_out) *weights_out = attn;

    return make_result(
        x.shape(), std::move(out), {x, p.wq, p.bq, p.wk, p.bk, p.wv, p.bv, p.wo, p.bo},
        [=, q = std::move(q), k = std::move(k), v = std::move(v), o = std::move(o), attn = std::move(attn)](Node& self) {
            const auto& xv = parent_value(self, 0);
            auto* dx = parent_grad(self, 0);
            auto raw = [](std::vector<double>* g) { return g ? g->data() : nullptr; };
            double* dwq = raw(parent_grad(self, 1));
            double* dbq = raw(parent_grad(self, 2));
            double* dwk = raw(parent_grad(self, 3));
            double* dbk = raw(parent_grad(self, 4));
            double* dwv = raw(parent_grad(self, 5));
            double* dbv = raw(parent_grad(self, 6));
            double* dwo = raw(parent_grad(self, 7));
            double* dbo = raw(parent_grad(self, 8));
            const double* wq = parent_value(self, 1).data();
            const double* wk = parent_value(self, 3).data();
            const double* wv = parent_value(self, 5).data();
            const double* wo = parent_value(self, 7).data();

            std::vector<double> d_o(per), dq(per), dk(per), dv(per), dp(len);
            for (std::size_t s = 0; s < n; ++s) {
                std::fill(d_o.begin(), d_o.end(), 0.0);
                std::fill(dq.begin(), dq.end(), 0.0);
                std::fill(dk.begin(), dk.end(), 0.0);
                std::fill(dv.begin(), dv.end(), 0.0);
                linear_rows_backward(&o[s * per], wo, &self.grad[s * per], d_o.data(), dwo, dbo, len, d, d);
                for (std::size_t h = 0; h < heads; ++h) {
                    const double* a = &attn[((s * heads + h) * len) * len];
                    for (std::size_t i = 0; i < len; ++i) {
                        double dot = 0;
                        for (std::size_t j = 0; j < len; ++j) {
                            double acc = 0;
                            for (std::size_t e = 0; e < dh; ++e) acc += d_o[i * d + h * dh + e] * v[s * per + j * d + h * dh + e];
                            dp[j] = acc;
                            dot += acc * a[i * len + j];
                        }
                        for (std::size_t j = 0; j < len; ++j) {
                            const double pij = a[i * len + j];
                            const double ds = pij * (dp[j] - dot) * inv_sqrt;
                            for (std::size_t e = 0; e < dh; ++e) {
                                dv[j * d + h * dh + e] += pij * d_o[i * d + h * dh + e];
                                dq[i * d + h * dh + e] += ds * k[s * per + j * d + h * dh + e];
                                dk[j * d + h * dh + e] += ds * q[s * per + i * d + h * dh + e];
                            }
                        }
                    }
                }
                double* dxs = dx ? &(*dx)[s * per] : nullptr;
                const double* xs = &xv[s * per];
                linear_rows_backward(xs, wq, dq.data(), dxs, dwq, dbq, len, d, d);
                linear_rows_backward(xs, wk, dk.data(), dxs, dwk, dbk, len, d, d);
                linear_rows_backward(xs, wv, dv.data(), dxs, dwv, dbv, len, d, d);
            }
        },
        "multi_head_attention");
}

Tensor cross_entropy(const Tensor& probs, std::span<const std::size_t> labels, std::span<const double> row_weight) {
    require_rank(probs, 2, "cross_entropy");
    const std::size_t n = probs.dim(0), c = probs.dim(1);
    if (labels.size() != n) throw ShapeError("cross_entropy: label count mismatch");
    if (!row_weight.empty() && row_weight.size() != n) throw ShapeError("cross_entropy: weight count mismatch");
    std::vector<std::size_t> lab(labels.begin(), labels.end());
    std::vector<double> w(n, 1.0);
    if (!row_weight.empty()) w.assign(row_weight.begin(), row_weight.end());
    double wsum = 0, total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (lab[i] >= c) throw UsageError("cross_entropy: class index " + std::to_string(lab[i]) + " out of range");
        wsum += w[i];
        total += w[i] * -std::log(std::max(probs.at(i * c + lab[i]), kProbFloor));
    }
    const double loss = wsum > 0 ? total / wsum : 0.0;
    return make_result(
        {1}, {loss}, {probs},
        [=, lab = std::move(lab), w = std::move(w)](Node& self) {
            auto* dp = parent_grad(self, 0);
            if (!dp || wsum <= 0) return;
            const auto& pv = parent_value(self, 0);
            for (std::size_t i = 0; i < n; ++i) {
                const double pt = pv[i * c + lab[i]];
                if (pt > kProbFloor) (*dp)[i * c + lab[i]] -= self.grad[0] * w[i] / (wsum * pt);
            }
        },
        "cross_entropy");
}

Tensor ncc_loss(const Tensor& pred, const Tensor& target, std::span<const double> row_weight) {
    require_rank(pred, 2, "ncc_loss");
    if (pred.shape() != target.shape())
        throw ShapeError("ncc_loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    const std::size_t n = pred.dim(0), m = pred.dim(1);
    if (!row_weight.empty() && row_weight.size() != n) throw ShapeError("ncc_loss: weight count mismatch");
    std::vector<double> w(n, 1.0);
    if (!row_weight.empty()) w.assign(row_weight.begin(), row_weight.end());
    const double md = static_cast<double>(m);

    // Per row: centered pred a, its std s, zB, sum a*zB.
    std::vector<double> a(n * m), zb(n * m), s(n), dot(n);
    double wsum = 0, total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* av = &pred.values()[i * m];
        const double* bv = &target.values()[i * m];
        const double mu_a = std::accumulate(av, av + m, 0.0) / md;
        const double mu_b = std::accumulate(bv, bv + m, 0.0) / md;
        double ssa = 0, ssb = 0;
        for (std::size_t j = 0; j < m; ++j) {
            a[i * m + j] = av[j] - mu_a;
            ssa += a[i * m + j] * a[i * m + j];
            ssb += (bv[j] - mu_b) * (bv[j] - mu_b);
        }
        s[i] = std::sqrt(ssa / md);
        const double sb = std::sqrt(ssb / md) + kNccEps;
        double acc = 0;
        for (std::size_t j = 0; j < m; ++j) {
            zb[i * m + j] = (bv[j] - mu_b) / sb;
            acc += a[i * m + j] * zb[i * m + j];
        }
        dot[i] = acc;
        if (w[i] != 0) {
            wsum += w[i];
            total += w[i] * acc / (s[i] + kNccEps) / md;
        }
    }
    const double loss = wsum > 0 ? -total / wsum : 0.0;
    return make_result(
        {1}, {loss}, {pred, target},
        [=, a = std::move(a), zb = std::move(zb), s = std::move(s), dot = std::move(dot), w = std::move(w)](Node& self) {
            auto* dp = parent_grad(self, 0);
            if (!dp || wsum <= 0) return;
            for (std::size_t i = 0; i < n; ++i) {
                if (w[i] == 0) continue;
                const double sigma = s[i] + kNccEps;
                const double coeff = -self.grad[0] * w[i] / wsum / md;
                double zb_mean = 0;
                for (std::size_t j = 0; j < m; ++j) zb_mean += zb[i * m + j];
                zb_mean /= md;
                const double ds_term = s[i] > 0 ? dot[i] / (md * s[i] * sigma * sigma) : 0.0;
                for (std::size_t j = 0; j < m; ++j)
                    (*dp)[i * m + j] += coeff * ((zb[i * m + j] - zb_mean) / sigma - ds_term * a[i * m + j]);
            }
        },
        "ncc_loss");
}

}  // namespace exg::nn
