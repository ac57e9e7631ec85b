import numpy as np
import pandas as pd


def convert_to_df(data, prefix="x"):
    """
    Converts data to a pandas DataFrame.

    Args:
        - data
            Array, Series or DataFrame to convert
        - prefix
            Column prefix used for unnamed array columns

    Returns: pd.DataFrame
    """
    if isinstance(data, pd.DataFrame):
        return data
    elif isinstance(data, pd.Series):
        return pd.DataFrame(data)
    elif isinstance(data, np.ndarray):
        if data.ndim != 2:
            data = data.reshape(data.shape[0], -1)
        return pd.DataFrame(data, columns=[f"{prefix}{i}" for i in range(data.shape[1])])
    else:
        raise ValueError("Data must be a pandas dataframe or numpy array")


def read_observations(path, delimiter=",", has_header=True):
    """
    Reads a CSV of observations (rows) into a float array, keeping numeric columns only.

    Args:
        - path
            Local CSV path
    Returns:
        - y
            np.ndarray of shape (n_observations, D)
    """
    df = pd.read_csv(path, sep=delimiter, header=0 if has_header else None)
    df = df.select_dtypes(include=[np.number]).dropna()
    if df.empty:
        raise ValueError(f"No numeric observations found in {path}.")
    return df.to_numpy(dtype=float)


def read_regression(path, target_column=-1, delimiter=",", has_header=True, standardize=True):
    """
    Reads a regression CSV: one column holds the response, every other numeric column is a covariate.

    Args:
        - path
            Local CSV path
        - target_column
            Name or position of the response column
        - standardize
            Whether to center and scale covariates and center the response
    Returns:
        - X, y
    """
    df = pd.read_csv(path, sep=delimiter, header=0 if has_header else None)
    df = df.select_dtypes(include=[np.number]).dropna()
    target = df.columns[target_column] if isinstance(target_column, int) else target_column
    if target not in df.columns:
        raise ValueError(f"Response column '{target}' not found in {path}.")
    X = df.drop(columns=[target]).to_numpy(dtype=float)
    y = df[target].to_numpy(dtype=float)
    if standardize:
        X = (X - X.mean(axis=0)) / np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
        y = y - y.mean()
    return X, y


def make_gmm_data(n_observations=50, n_components=2, dimension=2, separation=4.0, seed=0):
    """Synthetic mixture with equal weights and identity covariances; means are scaled basis vectors when K <= D."""
    rng = np.random.default_rng(seed)
    if n_components <= dimension:
        centers = separation * np.eye(n_components, dimension)
    else:
        centers = separation * rng.standard_normal((n_components, dimension))
    labels = rng.integers(0, n_components, size=n_observations)
    y = centers[labels] + rng.standard_normal((n_observations, dimension))
    return y, labels + 1


def make_regression_data(n_observations=100, n_features=8, n_nonzero=3, snr=5.0, seed=0):
    """
    Linear model whose ``n_nonzero`` leading coefficients have random sign and magnitude in [1, 2], with noise
    variance chosen so that ``var(X beta) / sigma^2 = snr``.

    Returns:
        - X, y, beta
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n_observations, n_features))
    beta = np.zeros(n_features)
    beta[:n_nonzero] = rng.choice([-1.0, 1.0], size=n_nonzero) * rng.uniform(1.0, 2.0, size=n_nonzero)
    signal = X @ beta
    sigma = np.sqrt(np.var(signal) / snr) if n_nonzero else 1.0
    y = signal + sigma * rng.standard_normal(n_observations)
    return X, y, beta
