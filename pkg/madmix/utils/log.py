import logging
import os


class Logger(logging.getLoggerClass()):
    """Experiment log writing to stderr and, when a path is given, to a file"""

    def __init__(self, path=None, level=logging.INFO, name="madmix"):
        super().__init__(name)
        self.setLevel(level)

        format = logging.Formatter("%(asctime)s - %(levelname)s - %(message)s")
        handlers = [logging.StreamHandler()]
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            handlers.append(logging.FileHandler(path))

        for handler in handlers:
            handler.setLevel(level)
            handler.setFormatter(format)
            self.addHandler(handler)

    def log(self, *args, level=logging.INFO):
        """Joins args into one message and logs it with the given level"""
        super().log(level, " ".join([str(arg) for arg in args]))

    def close(self):
        for handler in list(self.handlers):
            handler.close()
            self.removeHandler(handler)
