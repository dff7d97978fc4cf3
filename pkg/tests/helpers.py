from shapectl.dataset import generate_corpus, greedy_select
from shapectl.surrogate.env import DESK_ENV, SurrogateEnv

# tiny agent used wherever learning quality does not matter
SMALL = dict(actor_hidden=(8, 8), critic_hidden=(8, 8), n_quantiles=5, top_quantiles_to_drop=1,
             batch_size=16, lr=1e-3, warmup=50, freeze_threshold=500)


def desk_setup():
    """Reduced surrogate and its curated shape set."""
    env = SurrogateEnv(DESK_ENV)
    ds = greedy_select(generate_corpus(300, seed=0, basis=env.reachable_basis(), walk_step=0.035), 0.08)
    return env, ds
