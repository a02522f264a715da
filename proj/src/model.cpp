#include "epir/model.hpp"

#include <algorithm>

#include "epir/error.hpp"
#include "epir/init.hpp"
#include "epir/ops.hpp"
#include "epir/tensor_io.hpp"

namespace epir {

int ModelConfig::resolved_head_dim() const {
  if (head_dim > 0) return head_dim;
  return (tokenizer.model_dim + heads - 1) / heads;
}

std::vector<std::size_t> ModelConfig::token_schedule() const {
  std::vector<std::size_t> out;
  std::size_t n = initial_tokens();
  for (int b = 0; b < integration.num_blocks; ++b) {
    n -= std::min<std::size_t>(n, static_cast<std::size_t>(integration.pairs_per_block));
    out.push_back(n);
  }
  return out;
}

std::size_t ModelConfig::total_blocks() const {
  return static_cast<std::size_t>(integration.num_blocks + extractor.num_blocks_before_dtsm + 1);
}

void ModelConfig::validate() const {
  tokenizer.validate();
  if (heads < 1) throw ConfigError("heads must be at least 1");
  if (head_dim < 0) throw ConfigError("head_dim must be non-negative");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  extractor.validate();
  integration.validate(static_cast<std::size_t>(tokenizer.num_patches()), static_cast<std::size_t>(heads));
}

namespace {

const ModelConfig& checked(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}

template <typename T>
std::vector<TransformerBlock<T>> make_blocks(int count, const ModelConfig& cfg, std::mt19937_64& rng) {
  std::vector<TransformerBlock<T>> out;
  for (int i = 0; i < count; ++i)
    out.emplace_back(static_cast<std::size_t>(cfg.tokenizer.model_dim), static_cast<std::size_t>(cfg.heads),
                     static_cast<std::size_t>(cfg.resolved_head_dim()), rng);
  return out;
}

template <typename T>
void append_layers(AttentionRecord& record, const HeadStack<T>& stack, std::size_t b, const MergeTrace* trace) {
  LayerAttention layer;
  for (std::size_t h = 0; h < stack.heads; ++h) layer.heads.push_back(head_matrix(stack, b, h));
  layer.trace = trace ? *trace : MergeTrace::identity(stack.rows);
  record.push_back(std::move(layer));
}

}  // namespace

template <typename T>
EpirModel<T>::EpirModel(const ModelConfig& cfg, std::uint64_t seed) : EpirModel(checked(cfg), std::mt19937_64(seed)) {}

// Members are drawn from one generator in declaration order.
template <typename T>
EpirModel<T>::EpirModel(const ModelConfig& cfg, std::mt19937_64&& rng)
    : config(cfg),
      tokenizer(cfg.tokenizer, rng),
      integration(make_blocks<T>(cfg.integration.num_blocks, cfg, rng)),
      extractor(make_blocks<T>(cfg.extractor.num_blocks_before_dtsm, cfg, rng)),
      final_block(make_blocks<T>(1, cfg, rng).front()),
      head_w(init::xavier_uniform<T>(static_cast<std::size_t>(cfg.tokenizer.model_dim),
                                     static_cast<std::size_t>(cfg.num_classes), rng)),
      head_b(init::constant<T>({static_cast<std::size_t>(cfg.num_classes)}, 0.0)) {}

template <typename T>
std::vector<Parameter<T>> EpirModel<T>::parameters() const {
  std::vector<Parameter<T>> out;
  tokenizer.collect(out, "tokenizer.");
  for (std::size_t i = 0; i < integration.size(); ++i)
    integration[i].collect(out, "integration." + std::to_string(i) + ".");
  for (std::size_t i = 0; i < extractor.size(); ++i) extractor[i].collect(out, "extractor." + std::to_string(i) + ".");
  final_block.collect(out, "final.");
  out.push_back({"head.weight", head_w});
  out.push_back({"head.bias", head_b});
  return out;
}

template <typename T>
std::size_t EpirModel<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.numel();
  return n;
}

template <typename T>
ForwardResult<T> EpirModel<T>::forward(const Tensor<T>& patches) const {
  ForwardResult<T> res;
  auto x = add_cls_and_pos(tokenizer.tokenize(patches), tokenizer.cls, tokenizer.pos);
  const std::size_t B = x.batch();
  const auto pairs = static_cast<std::size_t>(config.integration.pairs_per_block);
  std::size_t block_index = 0;
  for (const auto& blk : integration) {
    const bool first = block_index++ == 0 && !config.uniform_residual;
    auto out = integration_block(x, blk, first, pairs);
    res.attention.push_back(std::move(out.block.attention));
    res.traces.push_back(std::move(out.traces));
    x = out.block.tokens;
  }
  res.tokens_after_integration = x.count();
  for (const auto& blk : extractor) {
    const bool first = block_index++ == 0 && !config.uniform_residual;
    auto out = transformer_block(x, blk, first);
    res.attention.push_back(std::move(out.attention));
    x = out.tokens;
  }

  const bool all = config.extractor.rollout_scope == RolloutScope::kAllProjected;
  const std::size_t first_layer = all ? 0 : integration.size();
  res.selected.resize(B);
  for (std::size_t b = 0; b < B; ++b) {
    AttentionRecord record;
    for (std::size_t l = first_layer; l < res.attention.size(); ++l) {
      const MergeTrace* trace = l < integration.size() ? &res.traces[l][b] : nullptr;
      append_layers(record, res.attention[l], b, trace);
    }
    res.selected[b] = select_indices(attention_rollout(project_attention(record)));
  }

  auto head = final_block_and_head(select_tokens(x, res.selected), final_block, head_w, head_b);
  res.logits = head.logits;
  res.cls_final = head.cls_final;
  res.attention.push_back(std::move(head.attention));
  return res;
}

template <typename T>
void EpirModel<T>::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  for (const auto& p : parameters()) save_tensor(dir / (p.name + ".ept1"), p.tensor);
}

template <typename T>
void EpirModel<T>::load(const std::filesystem::path& dir) {
  for (auto& p : parameters()) {
    const auto path = dir / (p.name + ".ept1");
    if (!std::filesystem::exists(path)) throw DataError("missing weight file " + path.string());
    const auto t = load_tensor<T>(path);
    if (t.shape() != p.tensor.shape()) {
      throw DimensionError("weight " + p.name + " has shape " + to_string(t.shape()) + ", expected " +
                           to_string(p.tensor.shape()));
    }
    auto dst = p.tensor.node()->data.begin();
    std::copy(t.data().begin(), t.data().end(), dst);
  }
}

template struct EpirModel<float>;
template struct EpirModel<double>;

}  // namespace epir
