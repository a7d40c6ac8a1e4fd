#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "splitcom/rng.hpp"
#include "splitcom/tensor.hpp"

namespace splitcom::ad {

struct Var;
using VarPtr = std::shared_ptr<Var>;

/// Node of the reverse-mode tape. Graphs are built per forward pass and
/// discarded after backward; parameter leaves carry a name so callers can
/// collect their gradients.
struct Var {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool grad_ready = false;
    std::string name;
    std::vector<VarPtr> parents;
    std::function<void(Var&)> backward_fn;

    Tensor& ensure_grad() {
        if (!grad_ready) {
            grad = Tensor::zeros(value.dims);
            grad_ready = true;
        }
        return grad;
    }
};

VarPtr leaf(Tensor value, bool requires_grad = false, std::string name = "");
VarPtr constant(Tensor value);

VarPtr matmul(const VarPtr& a, const VarPtr& b);
VarPtr add(const VarPtr& a, const VarPtr& b);
/// x is [..., d], bias has d elements, broadcast over rows.
VarPtr add_rowwise(const VarPtr& x, const VarPtr& bias);
VarPtr mul(const VarPtr& a, const VarPtr& b);
VarPtr scale(const VarPtr& a, float s);
VarPtr add_const(const VarPtr& a, const Tensor& c);
VarPtr layer_norm(const VarPtr& x, const VarPtr& gain, const VarPtr& bias, float eps = 1e-5f);
VarPtr softmax_rows(const VarPtr& x);
VarPtr gelu(const VarPtr& x);
VarPtr relu(const VarPtr& x);
VarPtr sigmoid(const VarPtr& x);
VarPtr transpose(const VarPtr& x);
VarPtr slice_cols(const VarPtr& x, int start, int len);
VarPtr concat_cols(const std::vector<VarPtr>& parts);
VarPtr slice_rows(const VarPtr& x, int start, int len);
/// Gather rows of table by token id.
VarPtr embed(const std::vector<int>& tokens, const VarPtr& table);
/// Inverted dropout with mask drawn from rng at build time; p = 0 is identity.
VarPtr dropout(const VarPtr& x, float p, Rng& rng);
VarPtr sum(const VarPtr& x);
/// Mean over rows of -log softmax(logits)[target]; returns a scalar var.
VarPtr cross_entropy_loss(const VarPtr& logits, const std::vector<int>& targets);

/// Reverse sweep from root. A scalar root seeds with 1; otherwise seed_grad
/// must be supplied. Running backward twice on the same root is a state
/// error.
void backward(const VarPtr& root, const Tensor* seed_grad = nullptr);

}  // namespace splitcom::ad
