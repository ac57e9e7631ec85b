import os
import zipfile

from joblib import dump, load


def load_object(path):
    """Loads a persisted flow, report or chain; zipped dumps are extracted next to the archive first."""
    file_path = path
    if zipfile.is_zipfile(path):
        file_path = path.replace(".zip", "")
        with zipfile.ZipFile(path) as archive:
            archive.extractall(os.path.dirname(path))

    if not os.path.isfile(file_path):
        raise FileNotFoundError(f"No persisted object at {path}.")

    obj = load(file_path)
    if zipfile.is_zipfile(path):
        os.remove(file_path)
    return obj


def save_object(obj, path, compress=3):
    """Persists ``obj`` with joblib, creating parent directories as needed."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    return dump(obj, path, compress=compress)
