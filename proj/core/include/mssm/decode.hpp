#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mssm/model.hpp"

namespace mssm {

/// Recurrent single-token inference over a batch of independent sequences.
/// Produces the same logits as Model::forward on the full prefix, at O(1)
/// cost per token for SSM layers (attention layers keep a key/value cache).
template <typename T>
class Decoder {
 public:
  Decoder(const Model<T>& model, std::size_t batch);

  /// Feeds one token per sequence and returns logits [batch x vocab] for the
  /// next position.
  Tensor<T> step(std::span<const int> tokens);

  std::size_t batch() const { return batch_; }
  std::size_t position() const { return position_; }

 private:
  struct LayerState {
    std::vector<T> conv;  // [batch x channels x (K-1)] oldest first
    std::vector<T> h;     // [batch x E x N] or linear-attention [batch x D x hd]
    std::vector<std::vector<T>> keys, values;  // per sequence, appended columns
  };

  const Model<T>& model_;
  std::size_t batch_;
  std::size_t position_ = 0;
  std::vector<LayerState> states_;
};

/// Index of the largest entry; ties resolve to the lowest index.
template <typename T>
std::size_t argmax(std::span<const T> row);

/// Greedy continuation of `prompt`. Stops after emitting `stop_token` (not
/// included in the result) or after `max_new` tokens.
template <typename T>
std::vector<int> greedy_decode(const Model<T>& model, std::span<const int> prompt, std::size_t max_new,
                               int stop_token);

}  // namespace mssm
