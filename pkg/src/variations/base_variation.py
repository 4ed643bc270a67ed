from data_model import MaterialField, ParameterKind, ParameterSpec, Sign


class BaseVariation:
    kinds: tuple[ParameterKind, ...] = ()

    def apply(self, base: MaterialField, spec: ParameterSpec, sign: Sign) -> MaterialField:
        raise NotImplementedError("Subclasses must implement this method")

    def reference(self, base: MaterialField, spec: ParameterSpec) -> MaterialField:
        """Model at P = reference_value, around which the pair is built."""
        return base

    def handles(self, spec: ParameterSpec) -> bool:
        return spec.kind in self.kinds
