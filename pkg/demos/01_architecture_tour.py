"""Tour of the two network builders.

Prints the layer-by-layer output shapes and trainable-parameter counts
of the custom damage classifier, then contrasts it with the much larger
VGG-16-shaped comparison network.
"""

from stormchip import build_damage_cnn, build_vgg16_like


def describe(net, title):
    print(f"\n{title}")
    print(f"{'#':>3}  {'layer':<28} {'output shape':<18} {'params':>12}")
    for i, (spec, shape, count) in enumerate(zip(net.layers, net.shape_trace(),
                                                 net.param_counts())):
        label = spec.kind
        if spec.kind == "conv3x3":
            label = f"conv3x3 x{spec.out_channels}" + (" (same)" if spec.padding else "")
        elif spec.kind == "dense":
            label = f"dense {spec.out_units}"
        elif spec.kind == "dropout":
            label = f"dropout {spec.dropout_rate}"
        if spec.activation_kind:
            label += f" + {spec.activation_kind}"
        print(f"{i:>3}  {label:<28} {str(shape):<18} {count:>12,}")
    print(f"{'':>3}  {'total':<28} {'':<18} {net.total_params():>12,}")


cnn = build_damage_cnn()
describe(cnn, "Damage classifier (150x150x3 input)")

vgg = build_vgg16_like()
describe(vgg, "VGG-16-shaped comparison network (150x150x3 input)")

conv_params = sum(c for s, c in zip(vgg.layers, vgg.param_counts()) if s.kind == "conv3x3")
print(f"\nThe VGG-16-shaped conv stack alone holds {conv_params:,} parameters,")
print(f"about {conv_params / cnn.total_params():.1f}x the whole damage classifier.")

print("\nVariants: dropout='FDO' adds 25% dropout after every pool;")
print("activation='leaky' swaps every relu for leaky_relu(alpha=0.1).")
fdo = build_damage_cnn(dropout="FDO", activation="leaky")
print("FDO/leaky layer kinds:", [s.kind for s in fdo.layers])
