#include "sopamorph/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace sopamorph {

std::string encoder_name(EncoderType type) {
  return type == EncoderType::kSopa ? "sopa" : "bilstm";
}

EncoderType encoder_from_name(const std::string& name) {
  if (name == "sopa") return EncoderType::kSopa;
  if (name == "bilstm") return EncoderType::kBilstm;
  throw std::invalid_argument("model: unknown encoder type '" + name + "'");
}

// ---- LstmCell --------------------------------------------------------------------

LstmCell::LstmCell(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  if (input_dim == 0 || hidden_dim == 0) {
    throw std::invalid_argument("lstm: dimensions must be positive");
  }
  wx = init_uniform(input_dim, 4 * hidden_dim, rng);
  wh = init_uniform(hidden_dim, 4 * hidden_dim, rng);
  b = Tensor::zeros(1, 4 * hidden_dim, /*requires_grad=*/true);
  for (std::size_t j = hidden_dim; j < 2 * hidden_dim; ++j) b.at(0, j) = 1.0;
}

std::pair<Tensor, Tensor> LstmCell::step(const Tensor& x, const Tensor& h,
                                         const Tensor& c) const {
  if (x.cols() != wx.rows() || h.cols() != hidden() || c.cols() != hidden() ||
      x.rows() != h.rows() || h.rows() != c.rows()) {
    throw std::invalid_argument("lstm: step operand shapes disagree");
  }
  const std::size_t H = hidden();
  const Tensor z = add(add(matmul(x, wx), matmul(h, wh)), b);
  const Tensor i = sigmoid(slice_cols(z, 0, H));
  const Tensor f = sigmoid(slice_cols(z, H, 2 * H));
  const Tensor g = tanh(slice_cols(z, 2 * H, 3 * H));
  const Tensor o = sigmoid(slice_cols(z, 3 * H, 4 * H));
  const Tensor c_next = add(mul(f, c), mul(i, g));
  const Tensor h_next = mul(o, tanh(c_next));
  return {h_next, c_next};
}

// ---- model construction ----------------------------------------------------------

Seq2seqModel::Seq2seqModel(const ModelConfig& config, std::shared_ptr<Vocabulary> source_vocab,
                           std::shared_ptr<Vocabulary> target_vocab, Rng& rng)
    : config_(config), src_vocab_(std::move(source_vocab)), tgt_vocab_(std::move(target_vocab)) {
  if (!src_vocab_ || !tgt_vocab_) {
    throw std::invalid_argument("model: vocabularies must be provided");
  }
  if (config_.hidden == 0 || config_.char_embed_dim == 0 || config_.tag_embed_dim == 0) {
    throw std::invalid_argument("model: dimensions must be positive");
  }
  if (config_.layers != 1) {
    throw std::invalid_argument("model: only single-layer recurrences are supported");
  }
  if (config_.share_embeddings && src_vocab_ != tgt_vocab_) {
    throw std::invalid_argument(
        "model: shared embeddings require source and target to use one vocabulary");
  }

  const std::size_t H = config_.hidden;

  // Parameter creation order is part of the seeding contract: embeddings,
  // then encoder, then decoder.
  embed_src_ = init_embedding(src_vocab_->size(), config_.char_embed_dim, rng);
  embed_tgt_ = config_.share_embeddings
                   ? embed_src_  // same storage: one table, two roles
                   : init_embedding(tgt_vocab_->size(), config_.tag_embed_dim, rng);

  std::size_t summary_dim = 0;  // width of the encoder's per-word / per-position outputs
  if (config_.encoder_type == EncoderType::kSopa) {
    SopaConfig sc;
    sc.patterns = config_.patterns;
    sc.embed_dim = config_.char_embed_dim;
    sc.restrict_transitions = config_.restrict_transitions;
    sopa_.emplace(sc, rng);
    summary_dim = sopa_->pattern_count();
  } else {
    enc_fwd_.emplace(config_.char_embed_dim, H, rng);
    enc_bwd_.emplace(config_.char_embed_dim, H, rng);
    summary_dim = 2 * H;
  }
  init_w_ = init_uniform(summary_dim, H, rng);
  init_b_ = Tensor::zeros(1, H, /*requires_grad=*/true);
  mem_w_ = init_uniform(summary_dim, H, rng);
  mem_b_ = Tensor::zeros(1, H, /*requires_grad=*/true);

  const std::size_t dec_in = config_.share_embeddings ? config_.char_embed_dim
                                                      : config_.tag_embed_dim;
  dec_ = LstmCell(dec_in, H, rng);
  attn_w_ = init_uniform(H, H, rng);
  comb_w_ = init_uniform(2 * H, H, rng);
  out_w_ = init_uniform(H, tgt_vocab_->size(), rng);
}

std::vector<std::pair<std::string, Tensor>> Seq2seqModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  if (config_.share_embeddings) {
    out.emplace_back("embed.shared", embed_src_);
  } else {
    out.emplace_back("embed.source", embed_src_);
    out.emplace_back("embed.target", embed_tgt_);
  }
  if (sopa_) {
    for (auto& named : sopa_->named_parameters()) out.push_back(std::move(named));
  } else {
    out.emplace_back("encoder.fwd.wx", enc_fwd_->wx);
    out.emplace_back("encoder.fwd.wh", enc_fwd_->wh);
    out.emplace_back("encoder.fwd.b", enc_fwd_->b);
    out.emplace_back("encoder.bwd.wx", enc_bwd_->wx);
    out.emplace_back("encoder.bwd.wh", enc_bwd_->wh);
    out.emplace_back("encoder.bwd.b", enc_bwd_->b);
  }
  out.emplace_back("encoder.init.w", init_w_);
  out.emplace_back("encoder.init.b", init_b_);
  out.emplace_back("encoder.memory.w", mem_w_);
  out.emplace_back("encoder.memory.b", mem_b_);
  out.emplace_back("decoder.lstm.wx", dec_.wx);
  out.emplace_back("decoder.lstm.wh", dec_.wh);
  out.emplace_back("decoder.lstm.b", dec_.b);
  out.emplace_back("decoder.attention.w", attn_w_);
  out.emplace_back("decoder.combine.w", comb_w_);
  out.emplace_back("decoder.output.w", out_w_);
  return out;
}

std::vector<Tensor> Seq2seqModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, p] : named_parameters()) out.push_back(p);
  return out;
}

// ---- encoding --------------------------------------------------------------------

EncodedSource Seq2seqModel::encode(const EncodedBatch& batch) const {
  const std::size_t B = batch.batch, T = batch.src_len, H = config_.hidden;
  if (B == 0 || T == 0 || batch.src.size() != B * T || batch.src_mask.size() != B * T) {
    throw std::invalid_argument("model: encode needs a non-empty, consistent batch");
  }

  std::vector<Tensor> steps(T), masks(T);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<std::size_t> column(B);
    Tensor m = Tensor::zeros(B, 1);
    for (std::size_t r = 0; r < B; ++r) {
      column[r] = batch.src[r * T + t];
      m.at(r, 0) = batch.src_mask[r * T + t];
    }
    steps[t] = gather_rows(embed_src_, column);
    masks[t] = m;
  }

  EncodedSource enc;
  enc.mask = masks;
  enc.c0 = Tensor::zeros(B, H);
  enc.memory.resize(T);

  if (sopa_) {
    const SopaOutput out = sopa_->match_batch(steps, masks);
    enc.h0 = tanh(add(matmul(out.final_scores, init_w_), init_b_));
    for (std::size_t t = 0; t < T; ++t) {
      // Padded rows carry the matcher's floor score; zero them before the
      // projection so no huge magnitudes enter the decoder. Attention masks
      // these positions regardless.
      const Tensor cleaned = mul(out.position_scores[t], masks[t]);
      enc.memory[t] = add(matmul(cleaned, mem_w_), mem_b_);
    }
    return enc;
  }

  // Bidirectional pass with masked state carry, so each direction's final
  // state is the state at its last real character.
  std::vector<Tensor> hf(T), hb(T);
  Tensor h = Tensor::zeros(B, H), c = Tensor::zeros(B, H);
  for (std::size_t t = 0; t < T; ++t) {
    auto [h2, c2] = enc_fwd_->step(steps[t], h, c);
    const Tensor keep = add(neg(masks[t]), 1.0);
    h = add(mul(h2, masks[t]), mul(h, keep));
    c = add(mul(c2, masks[t]), mul(c, keep));
    hf[t] = h;
  }
  const Tensor fwd_final = h;

  h = Tensor::zeros(B, H);
  c = Tensor::zeros(B, H);
  for (std::size_t tt = T; tt-- > 0;) {
    auto [h2, c2] = enc_bwd_->step(steps[tt], h, c);
    const Tensor keep = add(neg(masks[tt]), 1.0);
    h = add(mul(h2, masks[tt]), mul(h, keep));
    c = add(mul(c2, masks[tt]), mul(c, keep));
    hb[tt] = h;
  }
  const Tensor bwd_final = h;

  enc.h0 = tanh(add(matmul(concat_cols({fwd_final, bwd_final}), init_w_), init_b_));
  for (std::size_t t = 0; t < T; ++t) {
    enc.memory[t] = add(matmul(concat_cols({hf[t], hb[t]}), mem_w_), mem_b_);
  }
  return enc;
}

// ---- decoding --------------------------------------------------------------------

DecoderStep Seq2seqModel::decode_step(const std::vector<std::size_t>& prev_symbols,
                                      const Tensor& h, const Tensor& c,
                                      const EncodedSource& source) const {
  if (prev_symbols.size() != h.rows() || source.memory.empty()) {
    throw std::invalid_argument("model: decode_step operands disagree");
  }
  const Tensor x = gather_rows(embed_tgt_, prev_symbols);
  auto [h2, c2] = dec_.step(x, h, c);

  // Bilinear attention scores against each memory position, padding pushed
  // to an unreachable logit so its weight underflows to exactly zero.
  const Tensor query = matmul(h2, attn_w_);
  std::vector<Tensor> scores(source.memory.size());
  for (std::size_t t = 0; t < source.memory.size(); ++t) {
    const Tensor e = reduce_sum(mul(query, source.memory[t]), 1);
    const Tensor drop = add(neg(source.mask[t]), 1.0);
    scores[t] = add(mul(e, source.mask[t]), mul(drop, kNegInf));
  }
  const Tensor weights = softmax(concat_cols(scores), 1);

  Tensor context;
  for (std::size_t t = 0; t < source.memory.size(); ++t) {
    const Tensor part = mul(slice_cols(weights, t, t + 1), source.memory[t]);
    context = t == 0 ? part : add(context, part);
  }

  const Tensor attentional = tanh(matmul(concat_cols({context, h2}), comb_w_));
  DecoderStep step;
  step.logits = matmul(attentional, out_w_);
  step.h = h2;
  step.c = c2;
  step.attention = weights;
  return step;
}

Tensor Seq2seqModel::forward_teacher_forced(const EncodedBatch& batch) const {
  const std::size_t B = batch.batch, T = batch.tgt_len;
  if (T == 0 || batch.tgt_in.size() != B * T || batch.tgt_out.size() != B * T ||
      batch.tgt_mask.size() != B * T) {
    throw std::invalid_argument("model: teacher forcing needs consistent target arrays");
  }
  double count = 0.0;
  for (double m : batch.tgt_mask) count += m;
  if (count == 0.0) throw std::invalid_argument("model: batch has no target symbols");

  const EncodedSource enc = encode(batch);
  Tensor h = enc.h0, c = enc.c0;
  Tensor total;  // summed log-likelihood of real target positions
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<std::size_t> prev(B), gold(B);
    Tensor m = Tensor::zeros(B, 1);
    for (std::size_t r = 0; r < B; ++r) {
      prev[r] = batch.tgt_in[r * T + t];
      gold[r] = batch.tgt_out[r * T + t];
      m.at(r, 0) = batch.tgt_mask[r * T + t];
    }
    const DecoderStep step = decode_step(prev, h, c, enc);
    h = step.h;
    c = step.c;
    const Tensor logp = take_per_row(log_softmax_rows(step.logits), gold);
    const Tensor contrib = sum(mul(logp, m));
    total = t == 0 ? contrib : add(total, contrib);
  }
  return mul(total, -1.0 / count);
}

std::vector<std::size_t> Seq2seqModel::greedy_decode(
    const std::vector<std::size_t>& framed_source) const {
  if (framed_source.empty()) {
    throw std::invalid_argument("model: cannot decode an empty source");
  }
  EncodedBatch batch;
  batch.batch = 1;
  batch.src_len = framed_source.size();
  batch.src = framed_source;
  batch.src_mask.assign(framed_source.size(), 1.0);

  const EncodedSource enc = encode(batch);
  Tensor h = enc.h0, c = enc.c0;
  const std::size_t max_len = 2 * framed_source.size() + 5;

  std::vector<std::size_t> out;
  std::size_t prev = Vocabulary::kSos;
  for (std::size_t i = 0; i < max_len; ++i) {
    const DecoderStep step = decode_step({prev}, h, c, enc);
    h = step.h;
    c = step.c;
    const auto& row = step.logits.data();
    const std::size_t pick =
        std::max_element(row.begin(), row.end()) - row.begin();  // first max wins
    if (pick == Vocabulary::kEos) break;
    out.push_back(pick);
    prev = pick;
  }
  return out;
}

EncoderOutput Seq2seqModel::match_source(const std::vector<std::size_t>& framed_source) const {
  if (!sopa_) throw std::logic_error("pattern analysis requires the pattern encoder");
  if (framed_source.empty()) throw std::invalid_argument("empty source");
  return sopa_->match(gather_rows(embed_src_, framed_source));
}

}  // namespace sopamorph
