#pragma once

#include <string>
#include <vector>

#include "maestro/params.hpp"

namespace maestro {

/// Sinusoidal table, shape (L, d_model): even columns sin, odd columns cos.
Tensor positional_encoding(std::size_t L, std::size_t d_model);

/// 1D convolutional token embedding (edge-replication padding, length
/// preserving) plus positional encoding.
class TokenEmbed {
public:
    TokenEmbed(ParamStore& store, std::string prefix, std::size_t in_channels,
               std::size_t d_model, std::size_t kernel = 3);

    ad::Node* forward(ad::Graph& g, Binding& p, ad::Node* x) const; // (B,L,D)->(B,L,d)

private:
    std::string prefix_;
    std::size_t in_channels_, d_model_, kernel_;
};

struct EncoderOptions {
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_mult = 4;
};

/// Pre-layer-norm Transformer encoder: h + Attn(LN(h)), then + FFN(LN(.)).
class EncoderStack {
public:
    EncoderStack(ParamStore& store, std::string prefix, std::size_t d_model,
                 EncoderOptions opts);

    /// attn_capture, when given, receives one (B,heads,L,L) attention tensor
    /// per layer. Throws NumericError naming the layer on non-finite output.
    ad::Node* forward(ad::Graph& g, Binding& p, ad::Node* h,
                      std::vector<Tensor>* attn_capture = nullptr) const;

    std::size_t num_layers() const { return opts_.layers; }

private:
    std::string prefix_;
    std::size_t d_model_;
    EncoderOptions opts_;
};

/// Bidirectional LSTM with hidden size d/2 per direction; the concatenated
/// streams are projected back to d and added residually.
class BiLstmBlock {
public:
    BiLstmBlock(ParamStore& store, std::string prefix, std::size_t d_model);

    ad::Node* forward(ad::Graph& g, Binding& p, ad::Node* h) const;

    /// One direction without the projection/residual, for orientation tests.
    ad::Node* run_direction(ad::Graph& g, Binding& p, ad::Node* h, bool backward) const;

private:
    std::string prefix_;
    std::size_t d_model_, hidden_;
};

} // namespace maestro
