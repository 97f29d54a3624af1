#pragma once

// LSTM cell over tape variables. Gate layout in the packed [4H] preactivation
// is [input, forget, cell, output]; the forget-gate bias section starts at 1.0
// and all other biases at zero.

#include <string>

#include "nestrec/tape.hpp"

namespace nestrec {

struct LstmParams {
  Parameter* wx = nullptr;  // [4H, in]
  Parameter* wh = nullptr;  // [4H, H]
  Parameter* b = nullptr;   // [4H]
  Parameter* h0 = nullptr;  // [H] learned initial hidden
  Parameter* c0 = nullptr;  // [H] learned initial cell
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
};

inline LstmParams register_lstm(ParameterStore& store, const std::string& prefix,
                                std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  p.wx = &store.add(prefix + ".wx", glorot_uniform(rng, 4 * hidden_dim, input_dim));
  p.wh = &store.add(prefix + ".wh", glorot_uniform(rng, 4 * hidden_dim, hidden_dim));
  Tensor bias({4 * hidden_dim});
  for (std::size_t i = hidden_dim; i < 2 * hidden_dim; ++i) bias.v[i] = 1.0;
  p.b = &store.add(prefix + ".b", std::move(bias));
  p.h0 = &store.add(prefix + ".h0", Tensor({hidden_dim}));
  p.c0 = &store.add(prefix + ".c0", Tensor({hidden_dim}));
  return p;
}

struct LstmState {
  Var h;
  Var c;
};

inline LstmState lstm_initial(Tape& tape, const LstmParams& p) {
  return {tape.leaf(*p.h0), tape.leaf(*p.c0)};
}

inline LstmState lstm_step(Tape& tape, const LstmParams& p, const Var& x,
                           const LstmState& prev) {
  if (x.value().size() != p.input_dim)
    throw InternalError("lstm_step input size " + shape_string(x.value()) +
                        " does not match declared input dim " + std::to_string(p.input_dim));
  std::size_t h = p.hidden_dim;
  Var pre = add(affine(tape.leaf(*p.wx), x, tape.leaf(*p.b)),
                matmul(tape.leaf(*p.wh), prev.h));
  Var gate_in = sigmoid(slice(pre, 0, h));
  Var gate_forget = sigmoid(slice(pre, h, h));
  Var candidate = tanh(slice(pre, 2 * h, h));
  Var gate_out = sigmoid(slice(pre, 3 * h, h));
  Var cell = add(cmult(gate_forget, prev.c), cmult(gate_in, candidate));
  Var hidden = cmult(gate_out, tanh(cell));
  return {hidden, cell};
}

}  // namespace nestrec
