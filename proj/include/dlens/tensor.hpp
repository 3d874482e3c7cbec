#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dlens {

using Shape = std::vector<int64_t>;

namespace detail {

// Default-initializing allocator: sized construction skips the zero fill.
// Every op writes its full output, so the fill would be pure overhead.
template <class T>
struct UninitAllocator : std::allocator<T> {
    template <class U>
    struct rebind {
        using other = UninitAllocator<U>;
    };
    template <class U>
    void construct(U* p) noexcept(noexcept(::new (static_cast<void*>(p)) U)) {
        ::new (static_cast<void*>(p)) U;
    }
    template <class U, class... Args>
    void construct(U* p, Args&&... args) {
        ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
    }
};

using DVec = std::vector<double, UninitAllocator<double>>;

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of the computation graph. Leaves have no inputs and no backward
// function; interior nodes own the closure that routes the output gradient to
// their inputs.
struct Node {
    Shape shape;
    DVec data;
    DVec grad;  // allocated on demand, same length as data
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> inputs;
    std::function<void(Node&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

// Dense row-major fp64 tensor with optional reverse-mode gradient tracking.
// Value-semantic handle: copies share the underlying node.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int64_t dim(int i) const;  // negative indices count from the back
    int64_t numel() const;
    bool requires_grad() const;
    const char* op() const;

    std::span<const double> data() const;
    std::span<double> mutable_data();  // parameter updates; leaves only
    std::span<const double> grad() const;
    bool has_grad() const;

    double item() const;  // scalar tensors only

    void set_requires_grad(bool value);
    void zero_grad();

    // Reverse-mode sweep from a scalar root; accumulates into leaf grads.
    void backward() const;

    // Value copy with no graph history.
    Tensor detach() const;

    detail::NodePtr node() const { return node_; }

  private:
    detail::NodePtr node_;
};

// ---------------------------------------------------------------------------
// Grad-mode control. Inside a NoGradGuard no graph is recorded.
bool grad_enabled();

class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool prev_;
};

// ---------------------------------------------------------------------------
// Operations. All of them register gradient rules.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// [.., D] + [D]: the one permitted broadcast (rank-1 over the trailing axis).
Tensor add_bias(const Tensor& x, const Tensor& b);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor clamp_min(const Tensor& a, double floor);

// a: [.., K] x b: [K, N] -> [.., N]
Tensor matmul(const Tensor& a, const Tensor& b);
// a: [.., K] x b: [N, K] (transposed) -> [.., N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// x: [.., K] x w: [N, K] + b: [N] -> [.., N] (matmul_nt with the bias fused)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
// grouped products over rank-3 tensors
Tensor bmm(const Tensor& a, const Tensor& b);     // [G,M,K] x [G,K,N] -> [G,M,N]
Tensor bmm_nt(const Tensor& a, const Tensor& b);  // [G,M,K] x [G,N,K] -> [G,M,N]

// Numerically stable softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& logits, int axis = -1);
// scores: [G,T,T]; row (g,t) is softmaxed over columns [0, t], zero above.
Tensor causal_softmax(const Tensor& scores);
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias);

// table: [V, D]; out: prefix_shape + [D] (default [n, D]).
Tensor embedding_lookup(const Tensor& table, const std::vector<int32_t>& ids,
                        Shape prefix_shape = {});

// logits: [.., V]; masked token-mean of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, const std::vector<int32_t>& targets,
                     const std::vector<double>& weights);

Tensor sum(const Tensor& a);
// x: [.., V] with R rows, w: [R]; scales row i by w[i].
Tensor scale_rows(const Tensor& x, const Tensor& w);
// x: [.., C] with R rows -> [n, C] selecting the given row indices.
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& rows);
Tensor reshape(const Tensor& a, Shape shape);
// [B,T,D] <-> [B*H,T,D/H]
Tensor split_heads(const Tensor& x, int n_heads);
Tensor merge_heads(const Tensor& x, int n_heads);

// Central finite differences: (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
// The verification oracle for every gradient rule above.
std::vector<double> finite_difference_grad(const std::function<double(const Tensor&)>& f,
                                           const Tensor& x, double h = 1e-5);

// ---------------------------------------------------------------------------
// Graph inspection (tests assert acyclicity and single-visit traversal).
struct GraphSnapshot {
    struct NodeInfo {
        std::string op;
        std::vector<size_t> input_ids;
        size_t output_id;
    };
    std::vector<NodeInfo> nodes;  // in topological order
};
GraphSnapshot trace_graph(const Tensor& root);

// ---------------------------------------------------------------------------
// Worker threads for the kernels. Kernels are written so results are bitwise
// identical for any thread count.
void set_num_threads(int n);
int num_threads();
// Reads DLENS_THREADS; falls back to the hardware thread count.
void init_threads_from_env();

}  // namespace dlens
