#include "maestro/embed.hpp"

#include <cmath>

namespace maestro {

using ad::Graph;
using ad::Node;

Tensor positional_encoding(std::size_t L, std::size_t d_model) {
    Tensor pe = Tensor::zeros({L, d_model});
    for (std::size_t pos = 0; pos < L; ++pos) {
        for (std::size_t i = 0; i < d_model; i += 2) {
            const double div = std::pow(10000.0, static_cast<double>(i) /
                                                     static_cast<double>(d_model));
            const double angle = static_cast<double>(pos) / div;
            pe.at2(pos, i) = std::sin(angle);
            if (i + 1 < d_model) pe.at2(pos, i + 1) = std::cos(angle);
        }
    }
    return pe;
}

// ---------------------------------------------------------------------------

TokenEmbed::TokenEmbed(ParamStore& store, std::string prefix, std::size_t in_channels,
                       std::size_t d_model, std::size_t kernel)
    : prefix_(std::move(prefix)), in_channels_(in_channels), d_model_(d_model),
      kernel_(kernel) {
    if (kernel % 2 == 0) throw UsageError("token embedding kernel must be odd");
    store.create(prefix_ + ".conv.w", {d_model, in_channels, kernel}, Init::Xavier,
                 static_cast<double>(in_channels * kernel), static_cast<double>(d_model));
    store.create(prefix_ + ".conv.b", {d_model}, Init::Zero);
}

Node* TokenEmbed::forward(Graph& g, Binding& p, Node* x) const {
    const Shape& s = x->value.shape;
    if (s.size() != 3 || s[2] != in_channels_)
        throw ad::ShapeError("embed: expected (B,L," + std::to_string(in_channels_) +
                             "), got " + shape_str(s));
    const std::size_t B = s[0], L = s[1];
    const std::size_t half = (kernel_ - 1) / 2;

    Node* cf = g.transpose(x, 1, 2); // (B,D,L)
    Node* padded = g.pad_edge(cf, 2, half, half);
    Node* conv = g.conv1d(padded, p[prefix_ + ".conv.w"]); // (B,d,L)
    Node* tokens = g.transpose(conv, 1, 2);                // (B,L,d)
    tokens = ad::add_bias(g, tokens, p[prefix_ + ".conv.b"]);

    Node* pe = g.constant(positional_encoding(L, d_model_));
    Node* pe3 = g.expand(g.reshape(pe, {1, L, d_model_}), {B, L, d_model_});
    return g.add(tokens, pe3);
}

// ---------------------------------------------------------------------------

EncoderStack::EncoderStack(ParamStore& store, std::string prefix, std::size_t d_model,
                           EncoderOptions opts)
    : prefix_(std::move(prefix)), d_model_(d_model), opts_(opts) {
    if (d_model % opts.heads != 0)
        throw UsageError("encoder: head count must divide d_model");
    const auto d = static_cast<double>(d_model);
    const std::size_t ffn = d_model * opts.ffn_mult;
    for (std::size_t l = 0; l < opts.layers; ++l) {
        const std::string lp = prefix_ + ".layer" + std::to_string(l);
        for (const char* w : {".wq", ".wk", ".wv", ".wo"})
            store.create(lp + w, {d_model, d_model}, Init::Xavier, d, d);
        for (const char* b : {".bq", ".bk", ".bv", ".bo"})
            store.create(lp + b, {d_model}, Init::Zero);
        store.create(lp + ".ln1.g", {d_model}, Init::One);
        store.create(lp + ".ln1.b", {d_model}, Init::Zero);
        store.create(lp + ".ln2.g", {d_model}, Init::One);
        store.create(lp + ".ln2.b", {d_model}, Init::Zero);
        store.create(lp + ".ffn.w1", {d_model, ffn}, Init::Xavier, d, static_cast<double>(ffn));
        store.create(lp + ".ffn.b1", {ffn}, Init::Zero);
        store.create(lp + ".ffn.w2", {ffn, d_model}, Init::Xavier, static_cast<double>(ffn), d);
        store.create(lp + ".ffn.b2", {d_model}, Init::Zero);
    }
}

Node* EncoderStack::forward(Graph& g, Binding& p, Node* h,
                            std::vector<Tensor>* attn_capture) const {
    const Shape& s = h->value.shape;
    if (s.size() != 3 || s[2] != d_model_)
        throw ad::ShapeError("encoder: expected (B,L,d_model), got " + shape_str(s));
    const std::size_t B = s[0], L = s[1], d = d_model_;
    const std::size_t nh = opts_.heads, dh = d / nh;

    auto split_heads = [&](Node* x) {
        // (B,L,d) -> (B,nh,L,dh)
        return g.transpose(g.reshape(x, {B, L, nh, dh}), 1, 2);
    };

    for (std::size_t l = 0; l < opts_.layers; ++l) {
        const std::string lp = prefix_ + ".layer" + std::to_string(l);
        Node* a = g.layer_norm(h, p[lp + ".ln1.g"], p[lp + ".ln1.b"]);
        Node* flat = g.reshape(a, {B * L, d});
        Node* q = split_heads(g.reshape(ad::linear(g, flat, p[lp + ".wq"], p[lp + ".bq"]), {B, L, d}));
        Node* k = split_heads(g.reshape(ad::linear(g, flat, p[lp + ".wk"], p[lp + ".bk"]), {B, L, d}));
        Node* v = split_heads(g.reshape(ad::linear(g, flat, p[lp + ".wv"], p[lp + ".bv"]), {B, L, d}));

        Node* scores = g.scale(g.matmul(q, g.transpose(k, 2, 3)),
                               1.0 / std::sqrt(static_cast<double>(dh)));
        Node* attn = g.softmax(scores); // (B,nh,L,L), rows on the simplex
        if (attn_capture) attn_capture->push_back(attn->value);
        Node* ctx = g.matmul(attn, v);  // (B,nh,L,dh)
        Node* merged = g.reshape(g.transpose(ctx, 1, 2), {B * L, d});
        Node* o = ad::linear(g, merged, p[lp + ".wo"], p[lp + ".bo"]);
        h = g.add(h, g.reshape(o, {B, L, d}));

        Node* b = g.layer_norm(h, p[lp + ".ln2.g"], p[lp + ".ln2.b"]);
        Node* f1 = g.relu(ad::linear(g, g.reshape(b, {B * L, d}), p[lp + ".ffn.w1"],
                                     p[lp + ".ffn.b1"]));
        Node* f2 = ad::linear(g, f1, p[lp + ".ffn.w2"], p[lp + ".ffn.b2"]);
        h = g.add(h, g.reshape(f2, {B, L, d}));

        if (!h->value.all_finite())
            throw NumericError("encoder: non-finite activations in layer " + std::to_string(l));
    }
    return h;
}

// ---------------------------------------------------------------------------

BiLstmBlock::BiLstmBlock(ParamStore& store, std::string prefix, std::size_t d_model)
    : prefix_(std::move(prefix)), d_model_(d_model), hidden_(d_model / 2) {
    if (d_model % 2 != 0)
        throw UsageError("bilstm: d_model must be even (hidden size is d_model/2)");
    const auto d = static_cast<double>(d_model);
    const auto h4 = static_cast<double>(4 * hidden_);
    for (const char* dir : {".fw", ".bw"}) {
        const std::string dp = prefix_ + dir;
        store.create(dp + ".wx", {d_model, 4 * hidden_}, Init::Xavier, d, h4);
        store.create(dp + ".wh", {hidden_, 4 * hidden_}, Init::Xavier,
                     static_cast<double>(hidden_), h4);
        // forget-gate bias starts at 1
        Tensor& b = store.create(dp + ".b", {4 * hidden_}, Init::Zero);
        for (std::size_t i = hidden_; i < 2 * hidden_; ++i) b.data[i] = 1.0;
    }
    store.create(prefix_ + ".proj.w", {d_model, d_model}, Init::Zero);
    store.create(prefix_ + ".proj.b", {d_model}, Init::Zero);
}

Node* BiLstmBlock::run_direction(Graph& g, Binding& p, Node* h, bool backward) const {
    const Shape& s = h->value.shape;
    const std::size_t B = s[0], L = s[1];
    const std::string dp = prefix_ + (backward ? ".bw" : ".fw");
    Node* wx = p[dp + ".wx"];
    Node* wh = p[dp + ".wh"];
    Node* bias = p[dp + ".b"];

    Node* hs = g.constant(Tensor::zeros({B, hidden_}));
    Node* cs = g.constant(Tensor::zeros({B, hidden_}));
    std::vector<Node*> outs(L);
    for (std::size_t step = 0; step < L; ++step) {
        const std::size_t t = backward ? L - 1 - step : step;
        Node* xt = g.reshape(g.slice(h, 1, t, 1), {B, d_model_});
        Node* pre = g.add(g.add(g.matmul(xt, wx), g.matmul(hs, wh)),
                          g.expand(g.reshape(bias, {1, 4 * hidden_}), {B, 4 * hidden_}));
        Node* gi = g.sigmoid(g.slice(pre, 1, 0, hidden_));
        Node* gf = g.sigmoid(g.slice(pre, 1, hidden_, hidden_));
        Node* gg = g.tanh(g.slice(pre, 1, 2 * hidden_, hidden_));
        Node* go = g.sigmoid(g.slice(pre, 1, 3 * hidden_, hidden_));
        cs = g.add(g.mul(gf, cs), g.mul(gi, gg));
        hs = g.mul(go, g.tanh(cs));
        outs[t] = g.reshape(hs, {B, 1, hidden_});
    }
    return g.concat(outs, 1); // (B,L,hidden)
}

Node* BiLstmBlock::forward(Graph& g, Binding& p, Node* h) const {
    const Shape& s = h->value.shape;
    if (s.size() != 3 || s[2] != d_model_)
        throw ad::ShapeError("bilstm: expected (B,L,d_model), got " + shape_str(s));
    const std::size_t B = s[0], L = s[1];
    Node* fw = run_direction(g, p, h, false);
    Node* bw = run_direction(g, p, h, true);
    Node* both = g.concat({fw, bw}, 2); // (B,L,d)
    Node* proj = ad::linear(g, g.reshape(both, {B * L, d_model_}), p[prefix_ + ".proj.w"],
                            p[prefix_ + ".proj.b"]);
    return g.add(h, g.reshape(proj, {B, L, d_model_}));
}

} // namespace maestro
