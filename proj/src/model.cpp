#include "cirl/model.hpp"

#include <string>

#include "cirl/errors.hpp"
#include "cirl/rng.hpp"
#include "cirl/synthcorpus.hpp"

namespace cirl {

std::string_view to_string(SoftPromptMode mode) {
  switch (mode) {
    case SoftPromptMode::None: return "none";
    case SoftPromptMode::Universal: return "universal";
    case SoftPromptMode::Instance: return "instance";
  }
  return "instance";
}

SoftPromptMode soft_mode_from_string(std::string_view name) {
  if (name == "none") return SoftPromptMode::None;
  if (name == "universal") return SoftPromptMode::Universal;
  if (name == "instance") return SoftPromptMode::Instance;
  throw Error(ErrorKind::InvalidConfig, "unknown soft-prompt mode '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  const FrontendConfig& f = frontend;
  if (f.patches == 0 || f.d_raw == 0 || f.d_i == 0 || f.d_t == 0 || f.d_h == 0 ||
      f.n_queries == 0) {
    throw Error(ErrorKind::InvalidConfig, "model dimensions must be positive");
  }
  if (layers == 0 || heads == 0 || f.d_t % heads != 0) {
    throw Error(ErrorKind::InvalidConfig, "need layers >= 1 and heads dividing d_t");
  }
  if (pool_size == 0 || prompt_len == 0 || top_k == 0 || top_k > pool_size) {
    throw Error(ErrorKind::InvalidConfig, "prompt pool needs M >= K >= 1 and L_p >= 1");
  }
  if (task_prompt_len > static_cast<std::size_t>(tokens::kTaskPromptTokens)) {
    throw Error(ErrorKind::InvalidConfig, "task prompt length must be 0..4");
  }
  const std::size_t longest =
      f.n_queries + kMaxCaptionTokens + task_prompt_len + top_k * prompt_len + 2;
  if (longest > kContextLimit) {
    throw Error(ErrorKind::ContextOverflow, "configuration can exceed the 128-token context");
  }
}

DecoderConfig ModelConfig::decoder() const {
  DecoderConfig d;
  d.d_model = frontend.d_t;
  d.heads = heads;
  d.layers = layers;
  return d;
}

namespace {

const ModelConfig& validated(const ModelConfig& c) {
  c.validate();
  return c;
}

}  // namespace

Model::Model(ModelConfig config)
    : config_(validated(config)),
      vision_(config_.seed, config_.frontend.d_raw, config_.frontend.d_i) {
  Rng rng(derive_seed(config_.seed, 0x4D4F44454C000001ULL));
  connector_ = ConnectorParams::init(config_.frontend, rng);
  pool_ = PromptPoolParams::init(config_.pool_size, config_.prompt_len, config_.frontend.d_i,
                                 config_.frontend.d_t, rng);
  decoder_ = DecoderParams::init(config_.decoder(), rng);
}

std::vector<Parameter*> Model::parameters() {
  std::vector<Parameter*> out = connector_.all();
  for (Parameter* p : pool_.all()) out.push_back(p);
  for (Parameter* p : decoder_.all()) out.push_back(p);
  return out;
}

std::vector<const Parameter*> Model::parameters() const {
  std::vector<const Parameter*> out;
  for (Parameter* p : const_cast<Model*>(this)->parameters()) out.push_back(p);
  return out;
}

Parameter* Model::find(std::string_view name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return p;
  }
  return nullptr;
}

std::vector<double> Model::text_query(Role role, std::span<const int> caption) const {
  const Matrix& table = decoder_.tok_embed.value;
  std::vector<std::size_t> ids;
  if (role == Role::Query) {
    for (int t : caption) ids.push_back(static_cast<std::size_t>(t));
  } else {
    ids = task_prompt_ids(Role::Target, tokens::kTaskPromptTokens);
  }
  Matrix rows(ids.size(), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto src = table.row(ids[i]);
    std::copy(src.begin(), src.end(), rows.row(i).begin());
  }
  return text_key_query(rows);
}

EncodeResult Model::encode(ad::Tape& tape, Role role, const Matrix& visual_features,
                           std::span<const int> caption, bool capture_attention,
                           const std::vector<double>* pinned_text_query) {
  EncodeResult out;
  const ad::Var features = tape.constant(visual_features);
  const ad::Var sentence = connect(features, connector_);
  const ad::Var table = tape.parameter(decoder_.tok_embed);

  std::optional<ad::Var> soft;
  if (config_.soft_mode != SoftPromptMode::None) {
    out.image_query = image_key_query(visual_features);
    out.text_query = pinned_text_query ? *pinned_text_query : text_query(role, caption);
    out.selection = config_.soft_mode == SoftPromptMode::Instance
                        ? select(pool_, out.image_query, out.text_query, config_.top_k)
                        : fixed_selection(config_.top_k);
    const std::size_t open[] = {static_cast<std::size_t>(tokens::kSoftOpen)};
    const std::size_t close[] = {static_cast<std::size_t>(tokens::kSoftClose)};
    soft = assemble(tape.parameter(pool_.prompts), pool_.prompt_len, out.selection,
                    ad::gather_rows(table, open), ad::gather_rows(table, close));
  }

  const IntentInstruction instr =
      role == Role::Query
          ? build_query_instruction(sentence, table, caption, config_.task_prompt_len, soft)
          : build_target_instruction(sentence, table, config_.task_prompt_len, soft);
  DecodeResult decoded = decode(instr, decoder_, capture_attention);
  out.embedding = cirl::pool(decoded.hidden, config_.pooling);
  out.segments = instr.segments;
  out.attention = std::move(decoded.attention);
  return out;
}

std::vector<double> Model::embed(Role role, const Matrix& visual_features,
                                 std::span<const int> caption) {
  ad::Tape tape(false);
  const EncodeResult r = encode(tape, role, visual_features, caption);
  const auto row = r.embedding.value().row(0);
  return {row.begin(), row.end()};
}

void Model::zero_grad() {
  for (Parameter* p : parameters()) p->grad.set_zero();
}

void Model::round_to_float() {
  for (Parameter* p : parameters()) {
    for (double& v : p->value.flat()) v = static_cast<double>(static_cast<float>(v));
  }
}

}  // namespace cirl
