from vbprune import nn, sim


def tiny_example(p=10, n=400, n_test=100, seed=0, example=1):
    """A small instance of a simulated example, with a matching two-hidden-layer network."""
    train, test = sim.make_example(example, n, n_test, p, seed)
    kind = "logistic" if example == 3 else "regression"
    return train, test, nn.NetworkSpec((p, 5, 3, 1), ("relu", "relu"), kind)
