from .interp import knn_fill, label_components, smooth_map
from .mesh import UvMesh, load_obj, vertex_normals, write_obj
from .raster import (ShapeMapStack, UVOverlapWarning, empty_maps, load_maps, rasterize_shape_maps,
                     save_maps)
from .sampling import (SurfacePointSet, farthest_point_sample, fps_indices, load_points,
                       project_to_texels, sample_points, sample_surface, save_points, texel_points)
from .seams import NoSeamsWarning, seam_discrepancy, seam_edges
from .shapes import SHAPES, make_shape
from .views import Camera, ViewRaster, build_view_rasters, rasterize_view, render_l1_and_grad

__all__ = [
    "Camera", "NoSeamsWarning", "SHAPES", "ShapeMapStack", "SurfacePointSet", "UVOverlapWarning",
    "UvMesh", "ViewRaster", "build_view_rasters", "empty_maps", "farthest_point_sample",
    "fps_indices", "knn_fill", "label_components", "load_maps", "load_obj", "load_points",
    "make_shape", "project_to_texels", "rasterize_shape_maps", "rasterize_view",
    "render_l1_and_grad", "sample_points", "sample_surface", "save_maps", "save_points",
    "seam_discrepancy", "seam_edges", "smooth_map", "texel_points", "vertex_normals", "write_obj",
]
