import pytest

from vbprune import sim
from vbprune.config import ConfigError, load_config, parse_config, parse_verify_config
from vbprune.experiments import CONFIG_DIR

BASE = """
[data]
example = 1
p = 20
n_train = 200
n_test = 50
[opt]
l0 = 0.002
[ss]
lambda1 = 0.05
[train]
epochs = 4
batch = 50
"""


def test_defaults_resolve():
    cfg = parse_config(BASE)
    assert cfg.spec.layer_sizes == (20, 5, 3, 1)
    tc = cfg.train_config(200)
    assert tc.l0 == 0.002 and tc.optimizer == "em-mcmc" and tc.batch_size == 50
    assert tc.spike_slab.lambda1 == 0.05
    assert tc.spike_slab.em_interval == 4
    assert tc.spike_slab.warmup_iters == 4


def test_seed_override():
    cfg = parse_config(BASE)
    assert cfg.train_config(200).seed == 0
    assert cfg.train_config(200, seed=7).seed == 7


@pytest.mark.parametrize("n", [1, 2, 3])
def test_shipped_configs_load(n):
    cfg = load_config(CONFIG_DIR / f"example{n}.cfg")
    assert cfg.data.example == n
    assert cfg.spec.layer_sizes[0] == sim.DEFAULT_P[n]
    assert cfg.spec.output_kind == ("logistic" if n == 3 else "regression")


@pytest.mark.parametrize("patch,message", [
    ("[ss]\ndelta0 = 1\ndelta1 = 5\n", "delta0 must exceed delta1"),
    ("[data]\nfoo = 1\n", "unknown key 'foo' in \\[data\\]"),
    ("[nope]\nx = 1\n", "unknown section"),
    ("[opt]\nbeta1 = fast\n", "opt.beta1"),
    ("[opt]\nkind = magic\n", "opt.kind"),
    ("[opt]\nk_mode = custom\n", "needs opt.k"),
    ("[train]\nbatch = 500\n", "exceeds the training size"),
    ("[net]\nsizes = 30,5,1\n", "p=20"),
    ("[ss]\nwarmup_frac = 1.5\n", "warmup_frac"),
])
def test_invalid_values_are_rejected(patch, message):
    text = _merge(BASE, patch)
    with pytest.raises(ConfigError, match=message):
        parse_config(text)


def test_missing_data_source():
    with pytest.raises(ConfigError, match="data.example"):
        parse_config("[opt]\nl0 = 0.1\n[ss]\n")


def test_em_mcmc_requires_ss():
    with pytest.raises(ConfigError, match=r"\[ss\]"):
        parse_config("[data]\nexample = 1\np = 10\n")


def test_plain_sghmc_ignores_missing_ss():
    cfg = parse_config("[data]\nexample = 2\np = 10\n[opt]\nkind = sghmc\n")
    assert cfg.ss is None and cfg.train_config(10000).spike_slab is None


def test_malformed_text():
    with pytest.raises(ConfigError, match="malformed"):
        parse_config("just words\n")


def test_data_path(tmp_path):
    train, test = sim.make_example(2, 80, 20, 7, seed=1)
    path = tmp_path / "d.csv"
    sim.write_dataset(path, train, test)
    cfg = parse_config(f"[data]\npath = {path}\n[opt]\nkind = sghmc\n[train]\nbatch = 40\n")
    assert cfg.spec.layer_sizes == (7, 6, 4, 3, 1)
    tr, te = cfg.data.load()
    assert len(tr.y) == 80 and len(te.y) == 20
    with pytest.raises(ConfigError, match="exceeds"):
        parse_config(f"[data]\npath = {path}\n[opt]\nkind = sghmc\n[train]\nbatch = 81\n")
    with pytest.raises(ConfigError, match="does not exist"):
        parse_config(f"[data]\npath = {tmp_path / 'missing.csv'}\n")


def test_verify_section():
    v = parse_verify_config("[verify]\nn = 50\nl = 0.02\nk_mode = coldN\n")
    assert v == {"n": 50, "l": 0.02, "k_mode": "coldN"}
    with pytest.raises(ConfigError):
        parse_verify_config("[verify]\nsteps = many\n")


def _merge(base: str, patch: str) -> str:
    import configparser

    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read_string(base)
    cp.read_string(patch)
    out = []
    for name in cp.sections():
        out.append(f"[{name}]")
        out.extend(f"{k} = {v}" for k, v in cp.items(name))
    return "\n".join(out) + "\n"


def test_data_path_without_sidecar(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("x1,x2,x3,y\n1,2,3,4\n5,6,7,8\n")
    with pytest.raises(ConfigError, match="net.sizes is required"):
        parse_config(f"[data]\npath = {path}\n[opt]\nkind = sghmc\n")
    cfg = parse_config(f"[data]\npath = {path}\n[net]\nsizes = 3,2,1\n[opt]\nkind = sghmc\n[train]\nbatch = 1\n")
    assert cfg.spec.layer_sizes == (3, 2, 1)
    with pytest.raises(ConfigError, match="p=3"):
        parse_config(f"[data]\npath = {path}\n[net]\nsizes = 4,2,1\n[opt]\nkind = sghmc\n")
