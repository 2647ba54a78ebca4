#include "milkit/losses.hpp"

namespace milkit::losses {

Value ce_loss(Tape& tape, Value logits, int label) { return tape.ce_loss(logits, label); }

Value ppl_loss(Tape& tape, Value selected_tokens, Value projected_prompts, int label,
               bool literal_form) {
  const Tensor& tok = tape.val(selected_tokens);
  if (tok.rank() != 2 || tok.shape()[0] < 1)
    throw InputError("ppl_loss: needs at least one selected token");
  Value sims = tape.matmul_nt(selected_tokens, projected_prompts);
  return literal_form ? tape.prob_mean_rows(sims, label) : tape.nll_mean_rows(sims, label);
}

}  // namespace milkit::losses
