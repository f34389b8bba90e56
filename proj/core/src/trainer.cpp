#include "volimp/trainer.hpp"

namespace volimp::train {

using nd::RngStream;
using nd::Tape;
using nd::Var;

Result fit(vae::VaeParams params, const Tensor& x, const Tensor& mask, const Options& opt) {
  params.config.validate();
  loss::validate_spec(params.config, opt.loss);
  if (x.rows() < 1) throw DataError("fit: empty dataset");
  require_same_shape(x, mask, "fit");

  RngStream root(opt.seed);
  RngStream batch_rng = root.child("batch");
  RngStream eps_rng = root.child("eps");
  RngStream dropout_rng = root.child("dropout");

  const int n = x.rows();
  const int p = x.cols();
  const int b = std::min<int>(opt.batch_size, n);
  const int replicates = opt.loss.kind == loss::Kind::kIwae ? opt.loss.k : opt.loss.m;

  auto param_ptrs = params.tensors();
  std::vector<const Tensor*> cptrs(param_ptrs.begin(), param_ptrs.end());
  const std::vector<std::string> names = params.names();
  nd::AdamState adam(cptrs, opt.adam, opt.weight_decay);

  Result result;
  const bool training_mode = !opt.eval_mode;

  Tensor bx({b, p}), bm({b, p});
  for (std::int64_t step = 0; step < opt.steps; ++step) {
    for (int i = 0; i < b; ++i) {
      const int row = static_cast<int>(batch_rng.next_u64() % static_cast<std::uint64_t>(n));
      for (int j = 0; j < p; ++j) {
        bx.at(i, j) = x.at(row, j);
        bm.at(i, j) = mask.at(row, j);
      }
    }
    // Independent draws per batch row keep the stochastic-gradient variance
    // falling with batch size (the shared-draw form is for evaluation).
    Tensor eps = loss::draw_eps_base(eps_rng, b * replicates, params.config.latent_dim);

    Tape tape;
    vae::VaeVars vars = vae::load_vars(tape, params);
    loss::LossGraph g = loss::build_loss(tape, vars, params.config, bx, bm, opt.loss, eps,
                                         training_mode, &dropout_rng);
    tape.backward(g.total);

    std::vector<Tensor> grads;
    grads.reserve(vars.all.size());
    for (Var v : vars.all) grads.push_back(tape.grad(v));

    const double lr = nd::lr_at(opt.lr, step);
    nd::adam_step(param_ptrs, grads, adam, lr, names, opt.trainable);

    if (opt.log_every > 0 && (step % opt.log_every == 0 || step + 1 == opt.steps)) {
      loss::LossBreakdown bd = loss::breakdown(tape, g);
      result.log.push_back(LossRow{step, bd.total, bd.recon_loglik, bd.kl, lr});
    }
    if (opt.checkpoint_every > 0 && opt.checkpoint_cb && (step + 1) % opt.checkpoint_every == 0 &&
        step + 1 != opt.steps) {
      opt.checkpoint_cb(step + 1, params);
    }
    if (opt.step_cb && opt.step_cb(step + 1, params)) break;
  }

  result.params = std::move(params);
  return result;
}

}  // namespace volimp::train
