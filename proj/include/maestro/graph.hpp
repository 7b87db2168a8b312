#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "maestro/tensor.hpp"

namespace maestro::ad {

struct ShapeError : NumericError {
    explicit ShapeError(const std::string& msg) : NumericError(msg) {}
};

/// One value in the computation graph: forward result plus (lazily
/// allocated) adjoint of the same shape. Nodes are owned by the Graph
/// that created them; creation order is a topological order.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<Node*> parents;
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";
    std::uint32_t mark = 0;

    const Shape& shape() const { return value.shape; }
    double scalar() const { return value.data[0]; }
};

/// Reverse-mode tape. Single-threaded by construction: build a graph per
/// worker, never share one across threads. backward() visits reachable
/// nodes in reverse creation order exactly once; a second call without
/// zero_grad() is rejected.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Node* leaf(Tensor v, bool requires_grad = true);
    Node* constant(Tensor v) { return leaf(std::move(v), false); }
    Node* scalar_const(double v) { return constant(Tensor::scalar(v)); }

    Node* add(Node* a, Node* b);
    Node* sub(Node* a, Node* b);
    Node* mul(Node* a, Node* b);
    Node* div(Node* a, Node* b);
    Node* scale(Node* a, double c);
    Node* add_scalar(Node* a, double c);
    Node* matmul(Node* a, Node* b);

    Node* transpose(Node* a, std::size_t ax0, std::size_t ax1);
    Node* reshape(Node* a, Shape s);
    Node* slice(Node* a, std::size_t axis, std::size_t start, std::size_t len);
    Node* concat(const std::vector<Node*>& xs, std::size_t axis);
    Node* expand(Node* a, Shape s);
    Node* pad_edge(Node* a, std::size_t axis, std::size_t left, std::size_t right);
    Node* conv1d(Node* x, Node* w, std::size_t dilation = 1, std::size_t groups = 1);

    Node* softmax(Node* a); // along last axis
    Node* exp(Node* a);
    Node* log(Node* a);
    Node* sqrt(Node* a);
    Node* tanh(Node* a);
    Node* sigmoid(Node* a);
    Node* softplus(Node* a);
    Node* relu(Node* a);
    Node* hypot(Node* a, Node* b);
    Node* huber(Node* a, double delta);

    Node* sum(Node* a);
    Node* mean(Node* a);
    Node* sum_axis(Node* a, std::size_t axis, bool keepdim = false);
    Node* mean_axis(Node* a, std::size_t axis, bool keepdim = false);
    Node* layer_norm(Node* x, Node* gamma, Node* beta, double eps = 1e-6);

    /// Fused-op escape hatch: the caller supplies the forward value and a
    /// backward that pushes into parents via accumulate_grad.
    Node* custom(Tensor value, std::vector<Node*> parents,
                 std::function<void(Node&)> backward, const char* name);

    void backward(Node* root);
    void zero_grad();
    std::size_t num_nodes() const { return nodes_.size(); }

    static Tensor& ensure_grad(Node* n);
    static void accumulate_grad(Node* p, const std::vector<double>& g);

private:
    Node* make(Tensor v, std::vector<Node*> parents, const char* op);
    template <typename F, typename DF>
    Node* unary(Node* a, const char* name, F f, DF df);

    std::deque<Node> nodes_;
    bool backward_done_ = false;
    std::uint32_t epoch_ = 0;
};

// Small wiring helpers shared by the model blocks.

/// y = x @ w + b for x (M,d), w (d,n), b (n).
Node* linear(Graph& g, Node* x, Node* w, Node* b);

/// Adds a rank-1 bias along the last axis of any-rank x.
Node* add_bias(Graph& g, Node* x, Node* b);

/// Elementwise multiply of x by per-batch scalars s (shape (B)), x (B,...).
Node* scale_rows(Graph& g, Node* x, Node* s);

} // namespace maestro::ad
