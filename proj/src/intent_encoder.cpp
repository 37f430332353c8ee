#include "cirl/intent_encoder.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "cirl/errors.hpp"
#include "cirl/rng.hpp"
#include "cirl/synthcorpus.hpp"
#include "cirl/visual_frontend.hpp"

namespace cirl {

std::string_view to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::Visual: return "visual";
    case SegmentKind::Caption: return "caption";
    case SegmentKind::TaskPrompt: return "task_prompt";
    case SegmentKind::SoftPrompt: return "soft_prompt";
  }
  return "visual";
}

SegmentKind SegmentMap::kind_at(std::size_t pos) const {
  if (caption.contains(pos)) return SegmentKind::Caption;
  if (task_prompt.contains(pos)) return SegmentKind::TaskPrompt;
  if (soft_prompt.contains(pos)) return SegmentKind::SoftPrompt;
  return SegmentKind::Visual;
}

std::vector<std::size_t> task_prompt_ids(Role role, std::size_t length) {
  if (length > static_cast<std::size_t>(tokens::kTaskPromptTokens)) {
    throw Error(ErrorKind::InvalidConfig, "task prompt length must be at most 4");
  }
  const int base = role == Role::Query ? tokens::kQueryTaskBegin : tokens::kTargetTaskBegin;
  std::vector<std::size_t> ids(length);
  std::iota(ids.begin(), ids.end(), static_cast<std::size_t>(base));
  return ids;
}

namespace {

IntentInstruction build(Role role, ad::Var sentence_prompt, ad::Var token_table,
                        std::span<const int> caption, std::size_t task_prompt_len,
                        std::optional<ad::Var> soft_prompt) {
  IntentInstruction instr;
  instr.role = role;
  std::vector<ad::Var> parts{sentence_prompt};
  std::size_t pos = sentence_prompt.rows();
  instr.segments.visual = {0, pos};

  auto append = [&](ad::Var part, SegmentSpan& span) {
    span = {pos, pos + part.rows()};
    pos = span.end;
    parts.push_back(part);
  };
  instr.segments.caption = {pos, pos};
  if (!caption.empty()) {
    std::vector<std::size_t> ids;
    for (int t : caption) {
      if (t < 0 || static_cast<std::size_t>(t) >= token_table.rows()) {
        throw Error(ErrorKind::ShapeMismatch, "caption token outside the vocabulary");
      }
      ids.push_back(static_cast<std::size_t>(t));
    }
    append(ad::gather_rows(token_table, ids), instr.segments.caption);
  }
  instr.segments.task_prompt = {pos, pos};
  if (task_prompt_len > 0) {
    append(ad::gather_rows(token_table, task_prompt_ids(role, task_prompt_len)),
           instr.segments.task_prompt);
  }
  instr.segments.soft_prompt = {pos, pos};
  if (soft_prompt) append(*soft_prompt, instr.segments.soft_prompt);

  instr.segments.length = pos;
  if (pos > kContextLimit) {
    throw Error(ErrorKind::ContextOverflow,
                "instruction length " + std::to_string(pos) + " exceeds the context limit");
  }
  instr.embeddings = ad::concat_rows(parts);
  return instr;
}

}  // namespace

IntentInstruction build_query_instruction(ad::Var sentence_prompt, ad::Var token_table,
                                          std::span<const int> caption,
                                          std::size_t task_prompt_len,
                                          std::optional<ad::Var> soft_prompt) {
  return build(Role::Query, sentence_prompt, token_table, caption, task_prompt_len, soft_prompt);
}

IntentInstruction build_target_instruction(ad::Var sentence_prompt, ad::Var token_table,
                                           std::size_t task_prompt_len,
                                           std::optional<ad::Var> soft_prompt) {
  return build(Role::Target, sentence_prompt, token_table, {}, task_prompt_len, soft_prompt);
}

DecoderParams DecoderParams::init(const DecoderConfig& c, Rng& rng) {
  if (c.d_model % c.heads != 0) {
    throw Error(ErrorKind::InvalidConfig, "d_model must be divisible by the head count");
  }
  const std::size_t d = c.d_model, ff = c.ff_mult * c.d_model;
  const double in_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double in_ff = 1.0 / std::sqrt(static_cast<double>(ff));
  const double resid = 1.0 / std::sqrt(2.0 * static_cast<double>(c.layers));
  DecoderParams p;
  p.heads = c.heads;
  p.tok_embed = {"decoder.tok_embed", Matrix::gaussian(c.vocab, d, 1.0, rng)};
  p.pos_embed = {"decoder.pos_embed", Matrix::gaussian(c.context, d, 0.1, rng)};
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string pre = "decoder.layer" + std::to_string(l) + ".";
    DecoderLayerParams lp;
    lp.ln1_gain = {pre + "ln1_gain", Matrix(1, d, 1.0), {d}};
    lp.ln1_bias = {pre + "ln1_bias", Matrix(1, d, 0.0), {d}};
    lp.w_q = {pre + "w_q", Matrix::gaussian(d, d, in_d, rng)};
    lp.w_k = {pre + "w_k", Matrix::gaussian(d, d, in_d, rng)};
    lp.w_v = {pre + "w_v", Matrix::gaussian(d, d, in_d, rng)};
    lp.w_o = {pre + "w_o", Matrix::gaussian(d, d, in_d * resid, rng)};
    lp.ln2_gain = {pre + "ln2_gain", Matrix(1, d, 1.0), {d}};
    lp.ln2_bias = {pre + "ln2_bias", Matrix(1, d, 0.0), {d}};
    lp.ff_w1 = {pre + "ff_w1", Matrix::gaussian(d, ff, in_d, rng)};
    lp.ff_b1 = {pre + "ff_b1", Matrix(1, ff, 0.0), {ff}};
    lp.ff_w2 = {pre + "ff_w2", Matrix::gaussian(ff, d, in_ff * resid, rng)};
    lp.ff_b2 = {pre + "ff_b2", Matrix(1, d, 0.0), {d}};
    p.layers.push_back(std::move(lp));
  }
  p.final_gain = {"decoder.final_ln_gain", Matrix(1, d, 1.0), {d}};
  p.final_bias = {"decoder.final_ln_bias", Matrix(1, d, 0.0), {d}};
  return p;
}

std::vector<Parameter*> DecoderParams::all() {
  std::vector<Parameter*> out{&tok_embed, &pos_embed};
  for (auto& l : layers) {
    for (Parameter* p : {&l.ln1_gain, &l.ln1_bias, &l.w_q, &l.w_k, &l.w_v, &l.w_o, &l.ln2_gain,
                         &l.ln2_bias, &l.ff_w1, &l.ff_b1, &l.ff_w2, &l.ff_b2}) {
      out.push_back(p);
    }
  }
  out.push_back(&final_gain);
  out.push_back(&final_bias);
  return out;
}

DecodeResult decode(const IntentInstruction& instruction, DecoderParams& params,
                    bool capture_attention) {
  const ad::Var input = instruction.embeddings;
  ad::Tape& tape = input.tape();
  const std::size_t len = input.rows();
  if (len == 0) throw Error(ErrorKind::EmptySequence, "decode: empty instruction");
  if (len > params.pos_embed.value.rows()) {
    throw Error(ErrorKind::ContextOverflow, "decode: instruction exceeds the context limit");
  }
  params.forward_count->fetch_add(1, std::memory_order_relaxed);

  DecodeResult result;
  ad::Var x = ad::add(input, ad::slice_rows(tape.parameter(params.pos_embed), 0, len));
  for (auto& l : params.layers) {
    const ad::Var h =
        ad::layer_norm(x, tape.parameter(l.ln1_gain), tape.parameter(l.ln1_bias), kLayerNormEps);
    const ad::Var q = ad::matmul(h, tape.parameter(l.w_q));
    const ad::Var k = ad::matmul(h, tape.parameter(l.w_k));
    const ad::Var v = ad::matmul(h, tape.parameter(l.w_v));
    std::vector<Matrix> probs;
    const ad::Var mixed =
        ad::attention(q, k, v, params.heads, true, capture_attention ? &probs : nullptr);
    if (capture_attention) result.attention.push_back(std::move(probs));
    x = ad::add(x, ad::matmul(mixed, tape.parameter(l.w_o)));

    const ad::Var h2 =
        ad::layer_norm(x, tape.parameter(l.ln2_gain), tape.parameter(l.ln2_bias), kLayerNormEps);
    const ad::Var f = ad::gelu(ad::add_row(ad::matmul(h2, tape.parameter(l.ff_w1)),
                                           tape.parameter(l.ff_b1)));
    x = ad::add(x, ad::add_row(ad::matmul(f, tape.parameter(l.ff_w2)), tape.parameter(l.ff_b2)));
  }
  result.hidden = ad::layer_norm(x, tape.parameter(params.final_gain),
                                 tape.parameter(params.final_bias), kLayerNormEps);
  return result;
}

std::string_view to_string(PoolingStrategy strategy) {
  switch (strategy) {
    case PoolingStrategy::WeightedMean: return "weighted_mean";
    case PoolingStrategy::Last: return "last";
    case PoolingStrategy::Mean: return "mean";
  }
  return "weighted_mean";
}

PoolingStrategy pooling_from_string(std::string_view name) {
  if (name == "weighted_mean") return PoolingStrategy::WeightedMean;
  if (name == "last") return PoolingStrategy::Last;
  if (name == "mean") return PoolingStrategy::Mean;
  throw Error(ErrorKind::InvalidConfig, "unknown pooling strategy '" + std::string(name) + "'");
}

std::vector<double> pooling_weights(std::size_t length, PoolingStrategy strategy) {
  std::vector<double> w(length, 0.0);
  if (length == 0) return w;
  switch (strategy) {
    case PoolingStrategy::WeightedMean: {
      const double total = static_cast<double>(length) * static_cast<double>(length + 1) / 2.0;
      for (std::size_t i = 0; i < length; ++i) w[i] = static_cast<double>(i + 1) / total;
      break;
    }
    case PoolingStrategy::Last: w.back() = 1.0; break;
    case PoolingStrategy::Mean:
      for (auto& v : w) v = 1.0 / static_cast<double>(length);
      break;
  }
  return w;
}

ad::Var pool(ad::Var hidden, PoolingStrategy strategy) {
  const std::size_t len = hidden.rows();
  if (len == 0) throw Error(ErrorKind::EmptySequence, "pool: empty hidden states");
  if (strategy == PoolingStrategy::Last) return ad::slice_rows(hidden, len - 1, len);
  return ad::weighted_row_sum(hidden, pooling_weights(len, strategy));
}

}  // namespace cirl
