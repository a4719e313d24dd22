#pragma once

#include <functional>
#include <vector>

#include "somn/common.hpp"
#include "somn/tensor.hpp"

namespace somn {

enum class Pad { kValid, kSame };

// Reverse-mode tape over dense tensors. Ops append nodes; backward() walks
// them in exact reverse order. A tape is built, differentiated once and
// discarded; reuse after backward is an error.
//
// float instantiation carries training, double the finite-difference checks.
template <typename T>
class Tape {
public:
    struct Var {
        int idx = -1;
        bool valid() const { return idx >= 0; }
    };

    explicit Tape(bool checked = false) : checked_(checked) {}

    // Leaf over caller-owned storage; the tensor must outlive the tape.
    Var leaf(const Tensor<T>* external, bool needs_grad);
    // Leaf owned by the tape, no gradient.
    Var constant(Tensor<T> value);

    // x:(N,C,L) w:(O,C,K) b:(O) -> (N,O,L_out)
    Var conv1d(Var x, Var w, Var b, int stride = 1, Pad pad = Pad::kValid);
    // x:(N,C,L) -> (N,C,L_out); stride 0 means stride = window
    Var maxpool1d(Var x, int window, int stride = 0);
    // x:(N,F) w:(F,O) b:(O) -> (N,O)
    Var dense(Var x, Var w, Var b);
    Var relu(Var x);
    // Inverted dropout; identity when !train or p == 0. Mask drawn
    // sequentially from rng.
    Var dropout(Var x, double p, Rng& rng, bool train);
    // Row-wise softmax over the last axis of (N,C).
    Var softmax(Var x);
    // (N,A) ++ (N,B) -> (N,A+B)
    Var concat_cols(Var a, Var b);
    // (N,C,L) -> (N,C*L)
    Var flatten(Var x);
    // probs:(N,C), targets:(N,C), weights:(N) -> scalar
    //   L = -sum_n w_n sum_c t_nc log(max(p_nc, 1e-12))
    Var cross_entropy(Var probs, Tensor<T> targets, std::vector<T> weights);
    // sum_i coeffs_i * x_i -> scalar; the reduction used by gradient checks.
    Var weighted_sum(Var x, Tensor<T> coeffs);

    const Tensor<T>& val(Var v) const;
    // Gradient of the last backward() w.r.t. v; zeros if v was not reached.
    const Tensor<T>& grad(Var v) const;

    void backward(Var loss);
    bool backward_done() const { return backward_done_; }
    size_t size() const { return nodes_.size(); }

    static constexpr double kProbFloor = 1e-12;

private:
    struct Node {
        Tensor<T> owned;                 // storage when the tape owns the value
        const Tensor<T>* ext = nullptr;  // external storage (leaves only)
        Tensor<T> grad;                  // allocated lazily during backward
        std::function<void()> back;      // empty for leaves
        bool needs_grad = false;

        const Tensor<T>& value() const { return ext ? *ext : owned; }
    };

    Var push(Tensor<T> value, bool needs_grad, std::function<void()> back);
    const Tensor<T>& v(int idx) const { return nodes_[static_cast<size_t>(idx)].value(); }
    Tensor<T>& grad_of(int idx);
    void check_finite(const char* op, const Tensor<T>& t) const;
    void check_open(const char* op) const;
    bool wants(Var x) const { return nodes_[static_cast<size_t>(x.idx)].needs_grad; }

    std::vector<Node> nodes_;
    bool checked_;
    bool backward_done_ = false;
    Tensor<T> zero_;  // returned for unreached gradients
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace somn
