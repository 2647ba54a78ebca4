#pragma once

#include "milkit/tape.hpp"

namespace milkit::losses {

struct Breakdown {
  double ce = 0.0;
  double ppl = 0.0;
  double total = 0.0;
};

// -log softmax(logits)[label]; logits is a rank-1 vector or a 1 x C row.
Value ce_loss(Tape& tape, Value logits, int label);

// Mean over selected tokens of the negative log of the positive-pair softmax
// ratio against all class prompts (InfoNCE form). With literal_form the
// printed probability itself is returned instead.
Value ppl_loss(Tape& tape, Value selected_tokens, Value projected_prompts, int label,
               bool literal_form = false);

}  // namespace milkit::losses
