#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dct/nn_ops.hpp"
#include "dct/rng.hpp"

namespace dct::model {

inline constexpr int64_t kInputChannels = 3;

struct ModelConfig {
  int64_t input_hw = 256;
  int64_t base_channels = 32;
  int64_t encoder_stages = 4;
  int64_t embed_dim = 128;
  int64_t mlp_hidden = 256;
  int64_t n_classes = 3;
  int64_t attention_heads = 4;

  int64_t feat_hw() const { return input_hw >> encoder_stages; }
  int64_t flat_embed() const { return embed_dim * feat_hw() * feat_hw(); }

  void validate() const {
    if (input_hw <= 0 || base_channels <= 0 || encoder_stages <= 0 || embed_dim <= 0 ||
        mlp_hidden <= 0 || attention_heads <= 0)
      throw std::invalid_argument("ModelConfig: all dimensions must be positive");
    if (n_classes != 2 && n_classes != 3)
      throw std::invalid_argument("ModelConfig: n_classes must be 2 or 3");
    if (input_hw % (int64_t{1} << encoder_stages) != 0)
      throw std::invalid_argument("ModelConfig: input_hw not divisible by 2^encoder_stages");
    if (embed_dim % attention_heads != 0)
      throw std::invalid_argument("ModelConfig: embed_dim not divisible by attention_heads");
  }

  nlohmann::ordered_json to_json() const {
    return {{"input_hw", input_hw},     {"base_channels", base_channels},
            {"encoder_stages", encoder_stages}, {"embed_dim", embed_dim},
            {"mlp_hidden", mlp_hidden}, {"n_classes", n_classes},
            {"attention_heads", attention_heads}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.input_hw = j.at("input_hw").get<int64_t>();
    c.base_channels = j.at("base_channels").get<int64_t>();
    c.encoder_stages = j.at("encoder_stages").get<int64_t>();
    c.embed_dim = j.at("embed_dim").get<int64_t>();
    c.mlp_hidden = j.at("mlp_hidden").get<int64_t>();
    c.n_classes = j.at("n_classes").get<int64_t>();
    c.attention_heads = j.at("attention_heads").get<int64_t>();
    c.validate();
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

// Named parameters in registration order; the order fixes the checkpoint
// payload layout.
template <typename T>
class ParamStore {
 public:
  ag::Var<T> add(const std::string& name, Tensor<T> init) {
    for (const auto& [n, v] : items_)
      if (n == name) throw std::logic_error("duplicate parameter name: " + name);
    auto var = ag::parameter(std::move(init));
    items_.emplace_back(name, var);
    return var;
  }

  const std::vector<std::pair<std::string, ag::Var<T>>>& items() const { return items_; }

  ag::Var<T> find(const std::string& name) const {
    for (const auto& [n, v] : items_)
      if (n == name) return v;
    throw std::out_of_range("no parameter named " + name);
  }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& [name, v] : items_) n += v->value.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, ag::Var<T>>> items_;
};

namespace detail {

inline int64_t pick_groups(int64_t channels) {
  for (int64_t g : {8, 4, 2})
    if (channels % g == 0) return g;
  return 1;
}

template <typename T>
Tensor<T> fanin_uniform(Rng& rng, const Shape& shape, int64_t fan_in) {
  Tensor<T> t(shape);
  double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace detail

template <typename T>
struct Conv2dLayer {
  ag::Var<T> w, b;
  int64_t stride = 1, pad = 1;

  static Conv2dLayer make(ParamStore<T>& ps, Rng& rng, const std::string& name, int64_t c_in,
                          int64_t c_out, int64_t k, int64_t stride, int64_t pad) {
    Conv2dLayer l;
    l.stride = stride;
    l.pad = pad;
    l.w = ps.add(name + ".w", detail::fanin_uniform<T>(rng, Shape{c_out, c_in, k, k}, c_in * k * k));
    l.b = ps.add(name + ".b", Tensor<T>::zeros(Shape{c_out}));
    return l;
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::conv2d(x, w, b, stride, pad); }
};

template <typename T>
struct ConvT2dLayer {
  ag::Var<T> w, b;
  int64_t stride = 2, pad = 1;

  static ConvT2dLayer make(ParamStore<T>& ps, Rng& rng, const std::string& name, int64_t c_in,
                           int64_t c_out, int64_t k, int64_t stride, int64_t pad) {
    ConvT2dLayer l;
    l.stride = stride;
    l.pad = pad;
    l.w = ps.add(name + ".w", detail::fanin_uniform<T>(rng, Shape{c_in, c_out, k, k}, c_in * k * k));
    l.b = ps.add(name + ".b", Tensor<T>::zeros(Shape{c_out}));
    return l;
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::conv_transpose2d(x, w, b, stride, pad); }
};

template <typename T>
struct GroupNormLayer {
  ag::Var<T> gamma, beta;
  int64_t groups = 1;

  static GroupNormLayer make(ParamStore<T>& ps, const std::string& name, int64_t channels) {
    GroupNormLayer l;
    l.groups = detail::pick_groups(channels);
    l.gamma = ps.add(name + ".gamma", Tensor<T>::full(Shape{channels}, T{1}));
    l.beta = ps.add(name + ".beta", Tensor<T>::zeros(Shape{channels}));
    return l;
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::group_norm(x, gamma, beta, groups); }
};

template <typename T>
struct LinearLayer {
  ag::Var<T> w, b;

  static LinearLayer make(ParamStore<T>& ps, Rng& rng, const std::string& name, int64_t in,
                          int64_t out, bool bias = true) {
    LinearLayer l;
    l.w = ps.add(name + ".w", detail::fanin_uniform<T>(rng, Shape{out, in}, in));
    if (bias) l.b = ps.add(name + ".b", Tensor<T>::zeros(Shape{out}));
    return l;
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const { return ag::linear(x, w, b); }
};

// conv-norm-relu + one basic (two-conv) residual block per stage
template <typename T>
struct ResidualStage {
  Conv2dLayer<T> down;
  GroupNormLayer<T> down_norm;
  Conv2dLayer<T> conv1, conv2;
  GroupNormLayer<T> norm1, norm2;

  static ResidualStage make(ParamStore<T>& ps, Rng& rng, const std::string& name, int64_t c_in,
                            int64_t c_out, int64_t stride) {
    ResidualStage s;
    s.down = Conv2dLayer<T>::make(ps, rng, name + ".down", c_in, c_out, 3, stride, 1);
    s.down_norm = GroupNormLayer<T>::make(ps, name + ".down_norm", c_out);
    s.conv1 = Conv2dLayer<T>::make(ps, rng, name + ".conv1", c_out, c_out, 3, 1, 1);
    s.norm1 = GroupNormLayer<T>::make(ps, name + ".norm1", c_out);
    s.conv2 = Conv2dLayer<T>::make(ps, rng, name + ".conv2", c_out, c_out, 3, 1, 1);
    s.norm2 = GroupNormLayer<T>::make(ps, name + ".norm2", c_out);
    return s;
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const {
    auto h = ag::relu(down_norm(down(x)));
    auto r = norm2(conv2(ag::relu(norm1(conv1(h)))));
    return ag::relu(ag::add(h, r));
  }
};

// Basic-block residual encoder (no bottlenecks); widths double per stage up to
// embed_dim; ends ReLU-rectified so embeddings are nonnegative.
template <typename T>
struct Encoder {
  Conv2dLayer<T> stem;
  GroupNormLayer<T> stem_norm;
  std::vector<ResidualStage<T>> stages;
  Conv2dLayer<T> head;
  GroupNormLayer<T> head_norm;

  static Encoder make(ParamStore<T>& ps, Rng& rng, const std::string& name, const ModelConfig& cfg) {
    Encoder e;
    e.stem = Conv2dLayer<T>::make(ps, rng, name + ".stem", kInputChannels, cfg.base_channels, 3, 1, 1);
    e.stem_norm = GroupNormLayer<T>::make(ps, name + ".stem_norm", cfg.base_channels);
    int64_t c = cfg.base_channels;
    for (int64_t i = 0; i < cfg.encoder_stages; ++i) {
      int64_t c_out = std::min(cfg.base_channels << (i + 1), cfg.embed_dim);
      e.stages.push_back(
          ResidualStage<T>::make(ps, rng, name + ".stage" + std::to_string(i), c, c_out, 2));
      c = c_out;
    }
    e.head = Conv2dLayer<T>::make(ps, rng, name + ".head", c, cfg.embed_dim, 1, 1, 0);
    e.head_norm = GroupNormLayer<T>::make(ps, name + ".head_norm", cfg.embed_dim);
    return e;
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const {
    auto h = ag::relu(stem_norm(stem(x)));
    for (const auto& s : stages) h = s(h);
    return ag::relu(head_norm(head(h)));
  }
};

// Two fully-connected layers with a ReLU between, applied to the fully
// flattened embedding; input and output shapes match.
template <typename T>
struct Mlp {
  LinearLayer<T> fc1, fc2;

  static Mlp make(ParamStore<T>& ps, Rng& rng, const std::string& name, int64_t dim, int64_t hidden) {
    Mlp m;
    m.fc1 = LinearLayer<T>::make(ps, rng, name + ".fc1", dim, hidden);
    m.fc2 = LinearLayer<T>::make(ps, rng, name + ".fc2", hidden, dim);
    return m;
  }

  // x: [B,C,h,w] -> [B,C,h,w]
  ag::Var<T> operator()(const ag::Var<T>& x) const {
    Shape s = x->value.shape();
    int64_t b = s[0], flat = s[1] * s[2] * s[3];
    auto h = ag::reshape(x, Shape{b, flat});
    h = fc2(ag::relu(fc1(h)));
    return ag::reshape(h, s);
  }
};

// Multi-head cross-attention: queries from the projected top-view feature,
// keys/values from the front-view feature, residual back onto the queries.
// Learned positional embeddings enter the query/key paths only, and the
// projections carry no bias, so a zero value stream passes the input through
// untouched.
template <typename T>
struct CrossAttention {
  LinearLayer<T> wq, wk, wv, wo;
  ag::Var<T> pos_q, pos_k;
  int64_t heads = 1;

  static CrossAttention make(ParamStore<T>& ps, Rng& rng, const std::string& name,
                             const ModelConfig& cfg) {
    CrossAttention a;
    a.heads = cfg.attention_heads;
    int64_t c = cfg.embed_dim, tokens = cfg.feat_hw() * cfg.feat_hw();
    a.wq = LinearLayer<T>::make(ps, rng, name + ".wq", c, c, false);
    a.wk = LinearLayer<T>::make(ps, rng, name + ".wk", c, c, false);
    a.wv = LinearLayer<T>::make(ps, rng, name + ".wv", c, c, false);
    a.wo = LinearLayer<T>::make(ps, rng, name + ".wo", c, c, false);
    Tensor<T> pq(Shape{tokens, c}), pk(Shape{tokens, c});
    for (int64_t i = 0; i < pq.numel(); ++i) pq[i] = static_cast<T>(rng.uniform(-0.02, 0.02));
    for (int64_t i = 0; i < pk.numel(); ++i) pk[i] = static_cast<T>(rng.uniform(-0.02, 0.02));
    a.pos_q = ps.add(name + ".pos_q", std::move(pq));
    a.pos_k = ps.add(name + ".pos_k", std::move(pk));
    return a;
  }

  // [B,C,h,w] -> [B*heads, tokens, head_dim]
  ag::Var<T> split_heads(const ag::Var<T>& tokens2d, int64_t b, int64_t n, int64_t c) const {
    auto t = ag::reshape(tokens2d, Shape{b, n, heads, c / heads});
    t = ag::permute(t, {0, 2, 1, 3});
    return ag::reshape(t, Shape{b * heads, n, c / heads});
  }

  // returns fused feature [B,C,h,w]; attention weights [B*heads,n,n] written
  // to *attn_out when non-null
  ag::Var<T> operator()(const ag::Var<T>& x_prime, const ag::Var<T>& x,
                        Tensor<T>* attn_out = nullptr) const {
    Shape s = x_prime->value.shape();
    int64_t b = s[0], c = s[1], n = s[2] * s[3];
    if (!x->value.same_shape(x_prime->value))
      throw std::invalid_argument("cross_view_attend: query/key feature shapes differ");

    // [B,C,h,w] -> [B*n, C] token matrices
    auto to_tokens = [&](const ag::Var<T>& f) {
      auto t = ag::reshape(f, Shape{b, c, n});
      t = ag::permute(t, {0, 2, 1});
      return ag::reshape(t, Shape{b * n, c});
    };
    auto q_tokens = to_tokens(x_prime);
    auto kv_tokens = to_tokens(x);

    auto add_pos = [&](const ag::Var<T>& t, const ag::Var<T>& pos) {
      auto t3 = ag::reshape(t, Shape{b, n, c});
      return ag::reshape(ag::add_broadcast0(t3, pos), Shape{b * n, c});
    };
    auto q = split_heads(wq(add_pos(q_tokens, pos_q)), b, n, c);
    auto k = split_heads(wk(add_pos(kv_tokens, pos_k)), b, n, c);
    auto v = split_heads(wv(kv_tokens), b, n, c);

    T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(c / heads)));
    auto scores = ag::scale(ag::bmm(q, k, /*trans_b=*/true), inv_sqrt_d);
    auto attn = ag::softmax_last(scores);
    if (attn_out) *attn_out = attn->value;

    auto ctx = ag::bmm(attn, v);  // [B*heads, n, dh]
    ctx = ag::reshape(ctx, Shape{b, heads, n, c / heads});
    ctx = ag::permute(ctx, {0, 2, 1, 3});
    auto out = wo(ag::reshape(ctx, Shape{b * n, c}));

    auto fused_tokens = ag::add(q_tokens, out);  // residual onto the query stream
    auto fused = ag::reshape(fused_tokens, Shape{b, n, c});
    fused = ag::permute(fused, {0, 2, 1});
    return ag::reshape(fused, s);
  }
};

// Transposed-conv upsampler mirroring the encoder widths, ending in a 1x1
// logits conv.
template <typename T>
struct Decoder {
  std::vector<ConvT2dLayer<T>> ups;
  std::vector<GroupNormLayer<T>> norms;
  Conv2dLayer<T> out_conv;

  static Decoder make(ParamStore<T>& ps, Rng& rng, const std::string& name, const ModelConfig& cfg) {
    Decoder d;
    std::vector<int64_t> widths{cfg.base_channels};
    for (int64_t i = 0; i < cfg.encoder_stages; ++i)
      widths.push_back(std::min(cfg.base_channels << (i + 1), cfg.embed_dim));
    int64_t c = cfg.embed_dim;
    for (int64_t i = cfg.encoder_stages; i-- > 0;) {
      int64_t c_out = widths[static_cast<size_t>(i)];
      int64_t idx = cfg.encoder_stages - 1 - i;
      d.ups.push_back(
          ConvT2dLayer<T>::make(ps, rng, name + ".up" + std::to_string(idx), c, c_out, 4, 2, 1));
      d.norms.push_back(GroupNormLayer<T>::make(ps, name + ".up" + std::to_string(idx) + "_norm", c_out));
      c = c_out;
    }
    d.out_conv = Conv2dLayer<T>::make(ps, rng, name + ".out", c, cfg.n_classes, 1, 1, 0);
    return d;
  }

  ag::Var<T> operator()(const ag::Var<T>& x) const {
    auto h = x;
    for (size_t i = 0; i < ups.size(); ++i) h = ag::relu(norms[i](ups[i](h)));
    return out_conv(h);
  }
};

template <typename T>
struct EmbeddingBundle {
  ag::Var<T> x;             // front embedding
  ag::Var<T> x_bar;         // top embedding (training only)
  ag::Var<T> x_prime;       // G(x)
  ag::Var<T> x_dprime;      // F(G(x))
  ag::Var<T> x_bar_dprime;  // G(F(x_bar)) (training only)
  bool has_top = false;
};

template <typename T>
struct ModelOutput {
  ag::Var<T> main_logits;
  ag::Var<T> aux_logits;
  EmbeddingBundle<T> bundle;
  Tensor<T> attention;  // [B*heads, tokens, tokens]
};

// Front/top encoders, the two projection MLPs (G: front->top, F: top->front),
// cross-view attention, and the two decoders. Forward passes contain no
// stochastic ops, so train-mode and eval-mode dataflows agree numerically.
template <typename T>
class DctModel {
 public:
  explicit DctModel(const ModelConfig& cfg, uint64_t init_seed = 0) : cfg_(cfg) {
    cfg.validate();
    Rng rng(hash_combine(splitmix64(init_seed), 0x4d4f44454cull));  // "MODEL"
    front_enc_ = Encoder<T>::make(params_, rng, "front_encoder", cfg);
    top_enc_ = Encoder<T>::make(params_, rng, "top_encoder", cfg);
    mlp_g_ = Mlp<T>::make(params_, rng, "mlp_g", cfg.flat_embed(), cfg.mlp_hidden);
    mlp_f_ = Mlp<T>::make(params_, rng, "mlp_f", cfg.flat_embed(), cfg.mlp_hidden);
    attn_ = CrossAttention<T>::make(params_, rng, "cross_attention", cfg);
    dec_main_ = Decoder<T>::make(params_, rng, "decoder_main", cfg);
    dec_aux_ = Decoder<T>::make(params_, rng, "decoder_aux", cfg);
  }

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  ag::Var<T> encode_front(const ag::Var<T>& images) const {
    check_input(images, "encode_front");
    return front_enc_(images);
  }

  ag::Var<T> encode_top(const ag::Var<T>& layouts) const {
    check_input(layouts, "encode_top");
    return top_enc_(layouts);
  }

  ag::Var<T> project_front_to_top(const ag::Var<T>& x) const { return apply_mlp(mlp_g_, x, "project_front_to_top"); }
  ag::Var<T> project_top_to_front(const ag::Var<T>& x) const { return apply_mlp(mlp_f_, x, "project_top_to_front"); }

  ag::Var<T> cross_view_attend(const ag::Var<T>& x_prime, const ag::Var<T>& x,
                               Tensor<T>* attn_out = nullptr) const {
    if (x_prime->value.dim(1) % cfg_.attention_heads != 0)
      throw std::invalid_argument("cross_view_attend: channels not divisible by heads");
    return attn_(x_prime, x, attn_out);
  }

  ag::Var<T> decode_main(const ag::Var<T>& fused) const { return dec_main_(fused); }
  ag::Var<T> decode_aux(const ag::Var<T>& x_prime) const { return dec_aux_(x_prime); }

  ModelOutput<T> forward_train(const Tensor<T>& images, const Tensor<T>& layouts) const {
    if (layouts.empty()) throw std::invalid_argument("forward_train: layout input required");
    if (!images.same_shape(layouts))
      throw std::invalid_argument("forward_train: image/layout batch shapes differ");
    ModelOutput<T> out = run_front(ag::constant(images));
    auto x_bar = encode_top(ag::constant(layouts));
    out.bundle.x_bar = x_bar;
    out.bundle.x_bar_dprime = project_front_to_top(project_top_to_front(x_bar));
    out.bundle.has_top = true;
    return out;
  }

  ModelOutput<T> forward_infer(const Tensor<T>& images) const {
    return run_front(ag::constant(images));
  }

  // name -> float32 tensors, in registration order
  std::vector<std::pair<std::string, Tensor<float>>> state_dict() const {
    std::vector<std::pair<std::string, Tensor<float>>> out;
    for (const auto& [name, v] : params_.items()) out.emplace_back(name, v->value.template cast<float>());
    return out;
  }

  void load_state_dict(const std::vector<std::pair<std::string, Tensor<float>>>& sd) {
    if (sd.size() != params_.items().size())
      throw std::invalid_argument("load_state_dict: parameter count mismatch");
    for (size_t i = 0; i < sd.size(); ++i) {
      const auto& [name, tensor] = sd[i];
      const auto& [expect_name, var] = params_.items()[i];
      if (name != expect_name)
        throw std::invalid_argument("load_state_dict: expected " + expect_name + ", got " + name);
      if (tensor.shape() != var->value.shape())
        throw std::invalid_argument("load_state_dict: shape mismatch for " + name + ": expected " +
                                    shape_str(var->value.shape()) + ", got " + shape_str(tensor.shape()));
      var->value = tensor.template cast<T>();
    }
  }

 private:
  void check_input(const ag::Var<T>& x, const std::string& who) const {
    const Shape& s = x->value.shape();
    if (s.size() != 4 || s[1] != kInputChannels || s[2] != cfg_.input_hw || s[3] != cfg_.input_hw)
      throw std::invalid_argument(who + ": expected [B,3," + std::to_string(cfg_.input_hw) + "," +
                                  std::to_string(cfg_.input_hw) + "], got " + shape_str(s));
  }

  ag::Var<T> apply_mlp(const Mlp<T>& m, const ag::Var<T>& x, const std::string& who) const {
    const Shape& s = x->value.shape();
    if (s.size() != 4 || s[1] * s[2] * s[3] != cfg_.flat_embed())
      throw std::invalid_argument(who + ": embedding shape " + shape_str(s) +
                                  " incompatible with configured embed size");
    return m(x);
  }

  ModelOutput<T> run_front(const ag::Var<T>& images) const {
    ModelOutput<T> out;
    out.bundle.x = encode_front(images);
    out.bundle.x_prime = project_front_to_top(out.bundle.x);
    out.bundle.x_dprime = project_top_to_front(out.bundle.x_prime);
    out.bundle.has_top = false;
    auto fused = cross_view_attend(out.bundle.x_prime, out.bundle.x, &out.attention);
    out.main_logits = decode_main(fused);
    out.aux_logits = decode_aux(out.bundle.x_prime);
    return out;
  }

  ModelConfig cfg_;
  ParamStore<T> params_;
  Encoder<T> front_enc_, top_enc_;
  Mlp<T> mlp_g_, mlp_f_;
  CrossAttention<T> attn_;
  Decoder<T> dec_main_, dec_aux_;
};

}  // namespace dct::model
