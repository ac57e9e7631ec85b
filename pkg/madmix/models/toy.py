import numpy as np

from madmix.discrete import FullConditionalTarget

TOY_FLOOR = 1e-6
TOY_SHAPES = {"toy1d": (10,), "toy2d": (4, 5), "toy3d": (10, 10, 10)}


class ToyTarget(FullConditionalTarget):
    """Explicit joint PMF tensor over ``{1..K_1} x ... x {1..K_M}``."""

    def __init__(self, joint):
        joint = np.asarray(joint, dtype=float)
        if np.any(joint <= 0) or abs(joint.sum() - 1.0) > 1e-10:
            raise ValueError("Toy joint PMF must be strictly positive and sum to 1.")
        super().__init__(joint.shape)
        self.joint = joint / joint.sum()
        self._log_joint = np.log(self.joint)

    @classmethod
    def random(cls, support_sizes, seed=0, concentration=1.0, floor=TOY_FLOOR):
        """Symmetric Dirichlet draw over the flattened support, floored then renormalized."""
        rng = np.random.default_rng(seed)
        size = int(np.prod(support_sizes))
        joint = np.maximum(rng.dirichlet(np.full(size, concentration)), floor)
        return cls((joint / joint.sum()).reshape(support_sizes))

    @classmethod
    def named(cls, name, seed=0):
        if name not in TOY_SHAPES:
            raise ValueError(f"Unknown toy target '{name}'. Choose one of {sorted(TOY_SHAPES)}.")
        return cls.random(TOY_SHAPES[name], seed=seed)

    def conditional_probs(self, m, x):
        x = np.atleast_2d(x)
        if self.dim == 1:
            return np.tile(self.joint, (x.shape[0], 1))
        index = tuple(x[:, j] - 1 for j in range(self.dim) if j != m)
        slices = np.moveaxis(self.joint, m, -1)[index]
        return slices / slices.sum(axis=-1, keepdims=True)

    def unnormalized_log_mass(self, x):
        x = np.atleast_2d(x)
        return self._log_joint[tuple((x - 1).T)]

    def log_normalizer(self):
        return 0.0
