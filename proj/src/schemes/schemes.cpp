#include "dinf/schemes/schemes.hpp"

#include <algorithm>
#include <memory>
#include <utility>

#include "dinf/sim/errors.hpp"

namespace dinf::schemes {

using net::Group;
using net::Payload;
using sim::Device;
using tensor::FlopCounter;
using tensor::Tensor;

namespace {

struct Shared {
  tensor::TransformerConfig config;
  const tensor::ModelWeights* weights = nullptr;
  PartitionPlan plan;
  SchemeInputs inputs;
  std::vector<Tensor> logits;
  std::vector<std::vector<int>> generated;
};

std::size_t forward_rounds(const SchemeInputs& in) { return std::max<std::size_t>(1, in.max_new_tokens); }

Tensor from_payload(Payload p, std::size_t cols) {
  const auto rows = p.data.size() / cols;
  return Tensor({rows, cols}, std::move(p.data));
}

Payload to_payload(Tensor t) { return Payload::of(std::move(t).release()); }

int last_argmax(const Tensor& logits) {
  return static_cast<int>(tensor::argmax(logits.row(logits.rows() - 1)));
}

// --- tensor / pipeline / hybrid --------------------------------------------

struct LayerSlice {
  Tensor wq, wk, wv, wo, w1, w2;
};

Task<void> hybrid_program(Device& dev, std::shared_ptr<Shared> s) {
  const auto& cfg = s->config;
  const auto& w = *s->weights;
  const auto& plan = s->plan;
  const auto me = index_of(dev.id());
  const auto tp = plan.tp_degree;
  const auto stage = me / tp;
  const auto rank = me % tp;
  const bool first = stage == 0;
  const bool last = stage + 1 == plan.pp_stages;
  const Group group = net::make_group(stage * tp, tp);
  const auto f = cfg.head_dim();
  const auto heads = plan.heads[me];
  const auto ff = plan.ff_columns[me];
  const auto layers = plan.layers[me];
  const auto d = cfg.d_model;

  std::vector<LayerSlice> slices;
  for (auto l = layers.begin; l < layers.end; ++l) {
    const auto& lw = w.layers[l];
    const auto c0 = heads.begin * f;
    const auto c1 = heads.end * f;
    slices.push_back({lw.attn.wq.slice_cols(c0, c1), lw.attn.wk.slice_cols(c0, c1),
                      lw.attn.wv.slice_cols(c0, c1), lw.attn.wo.slice_rows(c0, c1),
                      lw.w1.slice_cols(ff.begin, ff.end), lw.w2.slice_rows(ff.begin, ff.end)});
  }

  auto seqs = s->inputs.prompts;
  const auto rounds = forward_rounds(s->inputs);
  for (std::size_t g = 0; g < rounds; ++g) {
    for (std::size_t j = 0; j < seqs.size(); ++j) {
      Tensor x;
      if (first) {
        if (g > 0 && !last) {
          auto fed_back = co_await dev.recv(process_id((plan.pp_stages - 1) * tp + rank));
          seqs[j].push_back(static_cast<int>(fed_back.data.at(0)));
        }
        x = tensor::embed(seqs[j], w);
      } else {
        auto in = co_await dev.recv(process_id(me - tp));
        x = from_payload(std::move(in), d);
      }

      FlopCounter fc;
      for (const auto& sl : slices) {
        const Tensor xn = tensor::rms_norm_rows(x);
        const Tensor q = tensor::matmul(xn, sl.wq, &fc);
        const Tensor k = tensor::matmul(xn, sl.wk, &fc);
        const Tensor v = tensor::matmul(xn, sl.wv, &fc);
        const Tensor a = tensor::attention_core(q, k, v, heads.size(), 0, true, &fc);
        Tensor attn = tensor::matmul(a, sl.wo, &fc);
        co_await dev.compute(std::exchange(fc.flops, 0.0), "attention");
        if (tp > 1) {
          Payload partial = to_payload(std::move(attn));
          Payload summed = co_await dev.all_reduce(group, std::move(partial));
          attn = from_payload(std::move(summed), d);
        }
        const Tensor h = tensor::add(x, attn);

        Tensor ffn = tensor::ffn_forward(tensor::rms_norm_rows(h), sl.w1, sl.w2, &fc);
        co_await dev.compute(std::exchange(fc.flops, 0.0), "ffn");
        if (tp > 1) {
          Payload partial = to_payload(std::move(ffn));
          Payload summed = co_await dev.all_reduce(group, std::move(partial));
          ffn = from_payload(std::move(summed), d);
        }
        x = tensor::add(h, ffn);
      }

      if (!last) {
        Payload activations = to_payload(std::move(x));
        co_await dev.send(process_id(me + tp), std::move(activations));
        continue;
      }
      Tensor logits = tensor::lm_head_forward(x, w, &fc);
      co_await dev.compute(std::exchange(fc.flops, 0.0), "lm_head");
      if (s->inputs.max_new_tokens > 0) {
        const int tok = last_argmax(logits);
        if (rank == 0) s->generated[j].push_back(tok);
        if (first) {
          seqs[j].push_back(tok);
        } else if (g + 1 < rounds) {
          Payload token = Payload::of({static_cast<float>(tok)});
          co_await dev.send(process_id(rank), std::move(token));
        }
      }
      if (g == 0 && rank == 0) s->logits[j] = std::move(logits);
    }
  }
}

// --- position-wise ----------------------------------------------------------

Task<void> position_program(Device& dev, std::shared_ptr<Shared> s, bool overlap) {
  const auto& cfg = s->config;
  const auto& w = *s->weights;
  const auto n = s->plan.n_devices;
  const auto me = index_of(dev.id());
  const Group group = net::make_group(0, n);
  const auto d = cfg.d_model;

  auto seqs = s->inputs.prompts;
  const auto rounds = forward_rounds(s->inputs);
  for (std::size_t g = 0; g < rounds; ++g) {
    for (std::size_t j = 0; j < seqs.size(); ++j) {
      const auto len = seqs[j].size();
      if (len < n) throw ConfigError("voltage: sequence shorter than the device count");
      const auto r = split_tail(len, n)[me];
      const bool uniform = len % n == 0;

      FlopCounter fc;
      Tensor x = tensor::embed(seqs[j], w);
      Tensor y;
      for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const auto& lw = w.layers[l];
        Tensor xn;
        Tensor q;
        if (l == 0) {
          xn = tensor::rms_norm_rows(x);
          q = tensor::matmul(xn.slice_rows(r.begin, r.end), lw.attn.wq, &fc);
          co_await dev.compute(std::exchange(fc.flops, 0.0), "xWq");
        } else if (overlap && n > 1) {
          // The local slice is already known, so its query projection runs
          // while the rest of the layer input is still being gathered.
          const auto h = dev.start_all_gather(group, to_payload(y), uniform);
          q = tensor::matmul(tensor::rms_norm_rows(y), lw.attn.wq, &fc);
          co_await dev.compute(std::exchange(fc.flops, 0.0), "xWq");
          auto full = co_await dev.wait(h);
          x = from_payload(std::move(full), d);
          xn = tensor::rms_norm_rows(x);
        } else {
          if (n == 1) {
            x = std::move(y);
          } else {
            Payload shard = to_payload(std::move(y));
            Payload full = co_await dev.all_gather(group, std::move(shard), uniform);
            x = from_payload(std::move(full), d);
          }
          xn = tensor::rms_norm_rows(x);
          q = tensor::matmul(xn.slice_rows(r.begin, r.end), lw.attn.wq, &fc);
          co_await dev.compute(std::exchange(fc.flops, 0.0), "xWq");
        }
        const Tensor k = tensor::matmul(xn, lw.attn.wk, &fc);
        const Tensor v = tensor::matmul(xn, lw.attn.wv, &fc);
        const Tensor a = tensor::attention_core(q, k, v, cfg.n_heads, r.begin, true, &fc);
        const Tensor attn = tensor::matmul(a, lw.attn.wo, &fc);
        co_await dev.compute(std::exchange(fc.flops, 0.0), "attention");
        const Tensor h = tensor::add(x.slice_rows(r.begin, r.end), attn);
        const Tensor ffn = tensor::ffn_forward(tensor::rms_norm_rows(h), lw.w1, lw.w2, &fc);
        co_await dev.compute(std::exchange(fc.flops, 0.0), "ffn");
        y = tensor::add(h, ffn);
      }
      if (n == 1) {
        x = std::move(y);
      } else {
        Payload shard = to_payload(std::move(y));
        Payload full = co_await dev.all_gather(group, std::move(shard), uniform);
        x = from_payload(std::move(full), d);
      }
      Tensor logits = tensor::lm_head_forward(x, w, &fc);
      co_await dev.compute(std::exchange(fc.flops, 0.0), "lm_head");
      if (s->inputs.max_new_tokens > 0) {
        const int tok = last_argmax(logits);
        if (me == 0) s->generated[j].push_back(tok);
        seqs[j].push_back(tok);
      }
      if (g == 0 && me == 0) s->logits[j] = std::move(logits);
    }
  }
}

}  // namespace

SchemeResult run_scheme(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                        const tensor::ModelWeights& weights, const SchemeInputs& inputs,
                        const RunSetup& setup) {
  config.validate();
  if (inputs.prompts.empty()) throw ConfigError("scheme: no prompts");
  std::size_t min_len = inputs.prompts.front().size();
  for (const auto& p : inputs.prompts) {
    if (p.empty()) throw ConfigError("scheme: empty prompt");
    min_len = std::min(min_len, p.size());
    if (p.size() + inputs.max_new_tokens > config.max_seq) {
      throw ConfigError("scheme: prompt plus generated tokens exceed max_seq");
    }
  }
  validate_plan(plan, config, plan.position_wise() ? min_len : 1);
  if (weights.layers.size() != config.n_layers) throw ConfigError("scheme: weights/config mismatch");
  if (!setup.profiles.empty() && setup.profiles.size() != plan.n_devices) {
    throw ConfigError("scheme: one device profile per device required");
  }

  auto shared = std::make_shared<Shared>();
  shared->config = config;
  shared->weights = &weights;
  shared->plan = plan;
  shared->inputs = inputs;
  shared->logits.resize(inputs.prompts.size());
  shared->generated.resize(inputs.prompts.size());

  sim::Engine engine(setup.topology, setup.options);
  for (std::size_t d = 0; d < plan.n_devices; ++d) {
    sim::Program program;
    if (plan.position_wise()) {
      const bool overlap = plan.kind == SchemeKind::Kilovolts;
      program = [shared, overlap](Device& dev) { return position_program(dev, shared, overlap); };
    } else {
      program = [shared](Device& dev) { return hybrid_program(dev, shared); };
    }
    engine.register_device(std::move(program),
                           setup.profiles.empty() ? tensor::DeviceProfile{} : setup.profiles[d]);
  }

  SchemeResult result;
  result.report = engine.run_until_complete();
  result.logits = std::move(shared->logits);
  result.generated = std::move(shared->generated);
  result.trace = engine.trace();
  result.events = engine.committed_events();
  return result;
}

namespace {

void expect_kind(const PartitionPlan& plan, SchemeKind kind) {
  if (plan.kind != kind) {
    throw ConfigError("scheme: plan is for " + std::string(to_string(plan.kind)) + ", not " +
                      std::string(to_string(kind)));
  }
}

}  // namespace

SchemeResult run_tensor_parallel(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                                 const tensor::ModelWeights& weights, const SchemeInputs& inputs,
                                 const RunSetup& setup) {
  expect_kind(plan, SchemeKind::TP);
  return run_scheme(plan, config, weights, inputs, setup);
}

SchemeResult run_pipeline_parallel(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                                   const tensor::ModelWeights& weights, const SchemeInputs& inputs,
                                   const RunSetup& setup) {
  expect_kind(plan, SchemeKind::PP);
  return run_scheme(plan, config, weights, inputs, setup);
}

SchemeResult run_hybrid(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                        const tensor::ModelWeights& weights, const SchemeInputs& inputs,
                        const RunSetup& setup) {
  expect_kind(plan, SchemeKind::Hybrid);
  return run_scheme(plan, config, weights, inputs, setup);
}

SchemeResult run_voltage(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                         const tensor::ModelWeights& weights, const SchemeInputs& inputs,
                         const RunSetup& setup) {
  expect_kind(plan, SchemeKind::Voltage);
  return run_scheme(plan, config, weights, inputs, setup);
}

SchemeResult run_kilovolts(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                           const tensor::ModelWeights& weights, const SchemeInputs& inputs,
                           const RunSetup& setup) {
  expect_kind(plan, SchemeKind::Kilovolts);
  return run_scheme(plan, config, weights, inputs, setup);
}

}  // namespace dinf::schemes
