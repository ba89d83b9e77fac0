import functools
import time
import uuid

from dualdp.app_log_config import logger


# --- Command Logging Middleware ---
def run_logging(command_name: str):
    """
    Wraps a CLI command so every invocation gets a run id, a start line and a
    completion line with the elapsed time and the exit status.
    """
    def decorator(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            run_id = str(uuid.uuid4())
            logger.info(f"rid={run_id} start command={command_name}")
            start_time = time.time()
            status = "error"
            try:
                with logger.contextualize(rid=run_id):
                    result = fn(*args, **kwargs)
                status = "ok"
                return result
            finally:
                process_time = (time.time() - start_time) * 1000
                formatted_process_time = '{0:.2f}'.format(process_time)
                logger.info(f"rid={run_id} completed_in={formatted_process_time}ms status={status}")
        return wrapper
    return decorator
