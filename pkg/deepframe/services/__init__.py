from .storage_service import StorageService
from .image_service import ImageService
from .bank_service import BankService
from .format_service import FormatService
from .frame_service import FrameService
from .sampler_service import SamplerService
from .learner_service import LearnerService
from .generative_service import GenerativeService
from .oracle_service import OracleService

__all__ = [
    "StorageService", "ImageService", "BankService", "FormatService", "FrameService",
    "SamplerService", "LearnerService", "GenerativeService", "OracleService",
]
