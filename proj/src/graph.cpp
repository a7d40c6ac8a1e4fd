#include "splitcom/graph.hpp"

#include <cmath>
#include <unordered_set>

#include "splitcom/kernels.hpp"
#include "splitcom/ops.hpp"

namespace splitcom::ad {
namespace {

VarPtr make(Tensor value, std::vector<VarPtr> parents, std::function<void(Var&)> fn) {
    auto v = std::make_shared<Var>();
    v->value = std::move(value);
    v->parents = std::move(parents);
    v->backward_fn = std::move(fn);
    for (const auto& p : v->parents)
        if (p->requires_grad || !p->parents.empty()) {
            v->requires_grad = true;
            break;
        }
    return v;
}

}  // namespace

VarPtr leaf(Tensor value, bool requires_grad, std::string name) {
    auto v = std::make_shared<Var>();
    v->value = std::move(value);
    v->requires_grad = requires_grad;
    v->name = std::move(name);
    return v;
}

VarPtr constant(Tensor value) { return leaf(std::move(value), false); }

VarPtr matmul(const VarPtr& a, const VarPtr& b) {
    Tensor out = ops::matmul(a->value, b->value);
    return make(std::move(out), {a, b}, [](Var& self) {
        const VarPtr& a = self.parents[0];
        const VarPtr& b = self.parents[1];
        // dA += g * B^T ; dB += A^T * g
        Tensor bt = ops::transpose2d(b->value);
        Tensor at = ops::transpose2d(a->value);
        kern::active().matmul_acc(self.grad.data.data(), bt.data.data(), a->ensure_grad().data.data(),
                                  self.grad.dims[0], self.grad.dims[1], bt.dims[1]);
        kern::active().matmul_acc(at.data.data(), self.grad.data.data(), b->ensure_grad().data.data(),
                                  at.dims[0], at.dims[1], self.grad.dims[1]);
    });
}

VarPtr add(const VarPtr& a, const VarPtr& b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("add shape mismatch");
    Tensor out(a->value.dims);
    kern::active().add(a->value.data.data(), b->value.data.data(), out.data.data(), out.data.size());
    return make(std::move(out), {a, b}, [](Var& self) {
        for (const auto& p : self.parents)
            kern::active().axpy(1.0f, self.grad.data.data(), p->ensure_grad().data.data(), self.grad.data.size());
    });
}

VarPtr add_rowwise(const VarPtr& x, const VarPtr& bias) {
    const int d = x->value.dims.back();
    if (bias->value.numel() != d) throw ShapeError("add_rowwise bias length mismatch");
    Tensor out = x->value;
    const std::int64_t rows = out.numel() / d;
    for (std::int64_t r = 0; r < rows; ++r)
        kern::active().axpy(1.0f, bias->value.data.data(), out.data.data() + r * d, d);
    return make(std::move(out), {x, bias}, [d, rows](Var& self) {
        kern::active().axpy(1.0f, self.grad.data.data(), self.parents[0]->ensure_grad().data.data(),
                            self.grad.data.size());
        Tensor& bg = self.parents[1]->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r)
            kern::active().axpy(1.0f, self.grad.data.data() + r * d, bg.data.data(), d);
    });
}

VarPtr mul(const VarPtr& a, const VarPtr& b) {
    if (!a->value.same_shape(b->value)) throw ShapeError("mul shape mismatch");
    Tensor out(a->value.dims);
    kern::active().mul(a->value.data.data(), b->value.data.data(), out.data.data(), out.data.size());
    return make(std::move(out), {a, b}, [](Var& self) {
        const std::size_t n = self.grad.data.size();
        Tensor tmp(self.grad.dims);
        kern::active().mul(self.grad.data.data(), self.parents[1]->value.data.data(), tmp.data.data(), n);
        kern::active().axpy(1.0f, tmp.data.data(), self.parents[0]->ensure_grad().data.data(), n);
        kern::active().mul(self.grad.data.data(), self.parents[0]->value.data.data(), tmp.data.data(), n);
        kern::active().axpy(1.0f, tmp.data.data(), self.parents[1]->ensure_grad().data.data(), n);
    });
}

VarPtr scale(const VarPtr& a, float s) {
    Tensor out(a->value.dims);
    kern::active().scale(a->value.data.data(), s, out.data.data(), out.data.size());
    return make(std::move(out), {a}, [s](Var& self) {
        kern::active().axpy(s, self.grad.data.data(), self.parents[0]->ensure_grad().data.data(),
                            self.grad.data.size());
    });
}

VarPtr add_const(const VarPtr& a, const Tensor& c) {
    if (!a->value.same_shape(c)) throw ShapeError("add_const shape mismatch");
    Tensor out(a->value.dims);
    kern::active().add(a->value.data.data(), c.data.data(), out.data.data(), out.data.size());
    return make(std::move(out), {a}, [](Var& self) {
        kern::active().axpy(1.0f, self.grad.data.data(), self.parents[0]->ensure_grad().data.data(),
                            self.grad.data.size());
    });
}

VarPtr layer_norm(const VarPtr& x, const VarPtr& gain, const VarPtr& bias, float eps) {
    const int d = x->value.dims.back();
    if (gain->value.numel() != d || bias->value.numel() != d) throw ShapeError("layer_norm gain/bias mismatch");
    const std::int64_t rows = x->value.numel() / d;
    Tensor out(x->value.dims);
    auto xhat = std::make_shared<Tensor>(x->value.dims);
    auto inv = std::make_shared<std::vector<float>>(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const float* row = x->value.data.data() + r * d;
        float mean = 0.0f;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<float>(d);
        float var = 0.0f;
        for (int j = 0; j < d; ++j) {
            float c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<float>(d);
        const float iv = 1.0f / std::sqrt(var + eps);
        (*inv)[static_cast<std::size_t>(r)] = iv;
        for (int j = 0; j < d; ++j) {
            const float xh = (row[j] - mean) * iv;
            xhat->data[r * d + j] = xh;
            out.data[r * d + j] = xh * gain->value.data[j] + bias->value.data[j];
        }
    }
    return make(std::move(out), {x, gain, bias}, [d, rows, xhat, inv](Var& self) {
        Tensor& xg = self.parents[0]->ensure_grad();
        Tensor& gg = self.parents[1]->ensure_grad();
        Tensor& bg = self.parents[2]->ensure_grad();
        const Tensor& gain = self.parents[1]->value;
        for (std::int64_t r = 0; r < rows; ++r) {
            const float* g = self.grad.data.data() + r * d;
            const float* xh = xhat->data.data() + r * d;
            const float iv = (*inv)[static_cast<std::size_t>(r)];
            float sum_gy = 0.0f, sum_gyx = 0.0f;
            for (int j = 0; j < d; ++j) {
                const float gy = g[j] * gain.data[j];
                sum_gy += gy;
                sum_gyx += gy * xh[j];
                gg.data[j] += g[j] * xh[j];
                bg.data[j] += g[j];
            }
            const float m1 = sum_gy / static_cast<float>(d);
            const float m2 = sum_gyx / static_cast<float>(d);
            for (int j = 0; j < d; ++j) xg.data[r * d + j] += iv * (g[j] * gain.data[j] - m1 - xh[j] * m2);
        }
    });
}

VarPtr softmax_rows(const VarPtr& x) {
    Tensor out = ops::softmax_rows(x->value);
    auto y = std::make_shared<Tensor>(out);
    return make(std::move(out), {x}, [y](Var& self) {
        const int m = y->dims[0], n = y->dims[1];
        Tensor& xg = self.parents[0]->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const float* g = self.grad.data.data() + static_cast<std::size_t>(i) * n;
            const float* yr = y->data.data() + static_cast<std::size_t>(i) * n;
            float dotv = 0.0f;
            for (int j = 0; j < n; ++j) dotv += g[j] * yr[j];
            float* out = xg.data.data() + static_cast<std::size_t>(i) * n;
            for (int j = 0; j < n; ++j) out[j] += yr[j] * (g[j] - dotv);
        }
    });
}

namespace {
constexpr float kSqrt2OverPi = 0.7978845608028654f;
constexpr float kCubic = 0.044715f;
}  // namespace

VarPtr gelu(const VarPtr& x) {
    Tensor out(x->value.dims);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        const float v = x->value.data[i];
        const float t = std::tanh(kSqrt2OverPi * (v + kCubic * v * v * v));
        out.data[i] = 0.5f * v * (1.0f + t);
    }
    return make(std::move(out), {x}, [](Var& self) {
        Tensor& xg = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
            const float v = self.parents[0]->value.data[i];
            const float u = kSqrt2OverPi * (v + kCubic * v * v * v);
            const float t = std::tanh(u);
            const float du = kSqrt2OverPi * (1.0f + 3.0f * kCubic * v * v);
            const float d = 0.5f * (1.0f + t) + 0.5f * v * (1.0f - t * t) * du;
            xg.data[i] += self.grad.data[i] * d;
        }
    });
}

VarPtr relu(const VarPtr& x) {
    Tensor out(x->value.dims);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::max(0.0f, x->value.data[i]);
    return make(std::move(out), {x}, [](Var& self) {
        Tensor& xg = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.data.size(); ++i)
            if (self.parents[0]->value.data[i] > 0.0f) xg.data[i] += self.grad.data[i];
    });
}

VarPtr sigmoid(const VarPtr& x) {
    Tensor out(x->value.dims);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = 1.0f / (1.0f + std::exp(-x->value.data[i]));
    return make(std::move(out), {x}, [](Var& self) {
        Tensor& xg = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < self.grad.data.size(); ++i) {
            const float s = self.value.data[i];
            xg.data[i] += self.grad.data[i] * s * (1.0f - s);
        }
    });
}

VarPtr transpose(const VarPtr& x) {
    Tensor out = ops::transpose2d(x->value);
    return make(std::move(out), {x}, [](Var& self) {
        Tensor gt = ops::transpose2d(self.grad);
        kern::active().axpy(1.0f, gt.data.data(), self.parents[0]->ensure_grad().data.data(), gt.data.size());
    });
}

VarPtr slice_cols(const VarPtr& x, int start, int len) {
    if (x->value.dims.size() != 2) throw ShapeError("slice_cols expects 2-d tensor");
    const int m = x->value.dims[0], n = x->value.dims[1];
    if (start < 0 || start + len > n) throw ShapeError("slice_cols out of range");
    Tensor out({m, len});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < len; ++j) out.at2(i, j) = x->value.at2(i, start + j);
    return make(std::move(out), {x}, [start, len, m](Var& self) {
        Tensor& xg = self.parents[0]->ensure_grad();
        const int n = xg.dims[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < len; ++j)
                xg.data[static_cast<std::size_t>(i) * n + start + j] += self.grad.at2(i, j);
    });
}

VarPtr concat_cols(const std::vector<VarPtr>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols with no parts");
    const int m = parts[0]->value.dims[0];
    int total = 0;
    for (const auto& p : parts) {
        if (p->value.dims.size() != 2 || p->value.dims[0] != m) throw ShapeError("concat_cols row mismatch");
        total += p->value.dims[1];
    }
    Tensor out({m, total});
    int off = 0;
    for (const auto& p : parts) {
        const int w = p->value.dims[1];
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) out.at2(i, off + j) = p->value.at2(i, j);
        off += w;
    }
    return make(std::move(out), parts, [m](Var& self) {
        int off = 0;
        for (const auto& p : self.parents) {
            const int w = p->value.dims[1];
            Tensor& pg = p->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j) pg.at2(i, j) += self.grad.at2(i, off + j);
            off += w;
        }
    });
}

VarPtr slice_rows(const VarPtr& x, int start, int len) {
    if (x->value.dims.size() != 2) throw ShapeError("slice_rows expects 2-d tensor");
    const int m = x->value.dims[0], n = x->value.dims[1];
    if (start < 0 || start + len > m) throw ShapeError("slice_rows out of range");
    Tensor out({len, n});
    std::copy_n(x->value.data.data() + static_cast<std::size_t>(start) * n, static_cast<std::size_t>(len) * n,
                out.data.data());
    return make(std::move(out), {x}, [start, len, n](Var& self) {
        Tensor& xg = self.parents[0]->ensure_grad();
        kern::active().axpy(1.0f, self.grad.data.data(),
                            xg.data.data() + static_cast<std::size_t>(start) * n,
                            static_cast<std::size_t>(len) * n);
    });
}

VarPtr embed(const std::vector<int>& tokens, const VarPtr& table) {
    if (table->value.dims.size() != 2) throw ShapeError("embed expects 2-d table");
    const int vocab = table->value.dims[0], d = table->value.dims[1];
    for (int t : tokens)
        if (t < 0 || t >= vocab) throw IndexError("token " + std::to_string(t) + " out of vocab range");
    const int seq = static_cast<int>(tokens.size());
    Tensor out({seq, d});
    for (int i = 0; i < seq; ++i)
        std::copy_n(table->value.data.data() + static_cast<std::size_t>(tokens[i]) * d, d,
                    out.data.data() + static_cast<std::size_t>(i) * d);
    auto toks = std::make_shared<std::vector<int>>(tokens);
    return make(std::move(out), {table}, [toks, d](Var& self) {
        Tensor& tg = self.parents[0]->ensure_grad();
        for (std::size_t i = 0; i < toks->size(); ++i)
            kern::active().axpy(1.0f, self.grad.data.data() + i * d,
                                tg.data.data() + static_cast<std::size_t>((*toks)[i]) * d, d);
    });
}

VarPtr dropout(const VarPtr& x, float p, Rng& rng) {
    if (p <= 0.0f) return x;
    if (p >= 1.0f) throw ConfigError("dropout rate must be < 1");
    Tensor mask(x->value.dims);
    const float keep = 1.0f / (1.0f - p);
    for (auto& v : mask.data) v = (rng.uniform() > p) ? keep : 0.0f;
    return mul(x, constant(std::move(mask)));
}

VarPtr sum(const VarPtr& x) {
    float total = 0.0f;
    for (float v : x->value.data) total += v;
    return make(Tensor({1}, {total}), {x}, [](Var& self) {
        Tensor& xg = self.parents[0]->ensure_grad();
        const float g = self.grad.data[0];
        for (auto& v : xg.data) v += g;
    });
}

VarPtr cross_entropy_loss(const VarPtr& logits, const std::vector<int>& targets) {
    const float loss = ops::cross_entropy(logits->value, targets);
    auto probs = std::make_shared<Tensor>(ops::softmax_rows(logits->value));
    auto tg = std::make_shared<std::vector<int>>(targets);
    return make(Tensor({1}, {loss}), {logits}, [probs, tg](Var& self) {
        const int n = probs->dims[0], v = probs->dims[1];
        Tensor& lg = self.parents[0]->ensure_grad();
        const float g = self.grad.data[0] / static_cast<float>(n);
        for (int i = 0; i < n; ++i) {
            const float* pr = probs->data.data() + static_cast<std::size_t>(i) * v;
            float* out = lg.data.data() + static_cast<std::size_t>(i) * v;
            for (int j = 0; j < v; ++j) out[j] += g * pr[j];
            out[(*tg)[static_cast<std::size_t>(i)]] -= g;
        }
    });
}

void backward(const VarPtr& root, const Tensor* seed_grad) {
    if (root->grad_ready) throw StateError("backward already run on this graph");
    if (seed_grad != nullptr) {
        if (!seed_grad->same_shape(root->value)) throw ShapeError("backward seed gradient shape mismatch");
        root->grad = *seed_grad;
        root->grad_ready = true;
    } else {
        if (root->value.numel() != 1) throw StateError("non-scalar backward requires a seed gradient");
        root->grad = Tensor(root->value.dims, {1.0f});
        root->grad_ready = true;
    }
    // Iterative post-order DFS, then reverse sweep.
    std::vector<Var*> order;
    std::unordered_set<Var*> seen;
    std::vector<std::pair<Var*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Var* p = node->parents[idx++].get();
            if ((p->requires_grad || !p->parents.empty()) && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Var* node = *it;
        if (node->backward_fn && node->grad_ready) node->backward_fn(*node);
    }
}

}  // namespace splitcom::ad
